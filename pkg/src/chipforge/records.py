"""Value types shared by the miners, the label assigner and the manifest."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from .geometry import Box, snap, trusted_box

POSITIVE = "positive"
NEGATIVE = "negative"
KIND_ORDER = {POSITIVE: 0, NEGATIVE: 1}

# Records are built with values pre-rounded to DECIMALS places so that a
# manifest survives a write/read round trip unchanged. q is idempotent and
# matches the compiled path bit for bit.
q = snap


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: float
    height: float
    file_name: str = ""
    flipped: bool = False
    source_id: int | None = None


@dataclass(frozen=True)
class GroundTruth:
    id: int
    box: Box
    category: int
    is_crowd: bool = False


@dataclass(frozen=True)
class Proposal:
    image_id: int
    box: Box
    score: float = 1.0


class CroppedGT(NamedTuple):
    """A ground-truth box clipped to a chip, in chip-local canvas pixels."""

    gt_id: int
    category: int
    box: Box
    valid: bool


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"


@dataclass(frozen=True)
class ProposalLabel:
    proposal_index: int
    label: Label
    iou: float = 0.0
    category: int | None = None
    matched_gt_id: int | None = None
    regression_target: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if (self.regression_target is not None) != (self.label is Label.POSITIVE):
            raise ValueError("regression target is present iff the label is positive")


@dataclass(frozen=True)
class AnchorLabel:
    anchor_index: int
    label: Label


@dataclass(frozen=True)
class ChipRecord:
    image_id: int
    scale_index: int
    factor: float
    rect_canvas: Box
    rect_original: Box
    kind: str
    gts: tuple[CroppedGT, ...] = ()
    flipped: bool = False
    n_proposals: int | None = None
    labels: tuple[ProposalLabel, ...] | None = field(default=None)

    def __reduce__(self):
        # Positional pickling; the default dataclass path dominates worker IPC.
        return ChipRecord, (
            self.image_id, self.scale_index, self.factor, self.rect_canvas, self.rect_original,
            self.kind, self.gts, self.flipped, self.n_proposals, self.labels,
        )

    @property
    def chip_size(self) -> int:
        return int(self.rect_canvas.w)

    def sort_key(self) -> tuple:
        return (
            self.image_id,
            KIND_ORDER[self.kind],
            self.scale_index,
            self.rect_canvas.y,
            self.rect_canvas.x,
        )


def make_chip_record(
    image: ImageInfo,
    scale_index: int,
    factor: float,
    x: int,
    y: int,
    chip_size: int,
    kind: str,
    gts: tuple[CroppedGT, ...],
    n_proposals: int | None = None,
) -> ChipRecord:
    # Back-project with the stored factor so each record is self-consistent.
    factor = q(factor)
    side = q(chip_size / factor)
    return ChipRecord(
        image_id=image.id,
        scale_index=scale_index,
        factor=factor,
        rect_canvas=trusted_box(int(x), int(y), int(chip_size), int(chip_size)),
        rect_original=trusted_box(q(x / factor), q(y / factor), side, side),
        kind=kind,
        gts=gts,
        flipped=image.flipped,
        n_proposals=n_proposals,
    )
