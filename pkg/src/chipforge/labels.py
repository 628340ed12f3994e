"""Label and regression-target assignment for proposals and anchors in a chip."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from .geometry import Box, clip, iou_matrix, scale_box
from .pyramid import ScaleSpec
from .records import AnchorLabel, ChipRecord, Label, Proposal, ProposalLabel, q

DEFAULT_PROPOSAL_IOU = 0.5
DEFAULT_ANCHOR_POS = 0.7
DEFAULT_ANCHOR_NEG = 0.3
DEFAULT_ANCHOR_INVALID = 0.3

_NEG, _POS, _IGN = 0, 1, 2
_CODES = (Label.NEGATIVE, Label.POSITIVE, Label.IGNORE)


def regression_targets(proposal: Box, gt: Box) -> tuple[float, float, float, float]:
    """Center offsets normalised by proposal size, log size ratios."""
    pcx, pcy = proposal.center()
    gcx, gcy = gt.center()
    return (
        (gcx - pcx) / proposal.w,
        (gcy - pcy) / proposal.h,
        math.log(gt.w / proposal.w),
        math.log(gt.h / proposal.h),
    )


def apply_regression(proposal: Box, targets: Sequence[float]) -> Box:
    """Inverse of :func:`regression_targets`."""
    tx, ty, tw, th = targets
    pcx, pcy = proposal.center()
    w = proposal.w * math.exp(tw)
    h = proposal.h * math.exp(th)
    cx = pcx + tx * proposal.w
    cy = pcy + ty * proposal.h
    return Box(cx - w / 2, cy - h / 2, w, h)


def _gt_table(chip: ChipRecord, valid: bool | None = None):
    # Sorted by gt_id so argmax ties resolve to the lowest id.
    gts = sorted((g for g in chip.gts if valid is None or g.valid == valid), key=lambda g: g.gt_id)
    return gts, np.array([g.box.as_list() for g in gts], dtype=np.float64).reshape(-1, 4)


# Slack for clipped boxes whose x + w lands a rounding step past the edge.
_FRAME_EPS = 1e-6


def _inside_chip(b: Box, size: float) -> bool:
    return (
        b.x >= -_FRAME_EPS
        and b.y >= -_FRAME_EPS
        and b.x + b.w <= size + _FRAME_EPS
        and b.y + b.h <= size + _FRAME_EPS
    )


def assign_proposal_labels(
    proposals: Sequence[Box],
    chip: ChipRecord,
    scale: ScaleSpec,
    iou_pos: float = DEFAULT_PROPOSAL_IOU,
    indices: Sequence[int] | None = None,
) -> list[ProposalLabel]:
    """Label chip-local proposals against every ground truth retained in the chip.

    Proposals whose original-coordinate area falls outside the scale's range
    are ignored. The others match the overlapping ground truth (valid or not)
    with the highest IoU and are positive when that IoU is strictly above
    ``iou_pos``. ``indices`` overrides the reported proposal indices.
    """
    size = chip.rect_canvas.w
    for b in proposals:
        if not _inside_chip(b, size):
            raise ValueError(f"proposal {b} lies outside the {size}px chip frame")
    if indices is None:
        indices = range(len(proposals))
    gts, gt_boxes = _gt_table(chip)
    props = np.array([b.as_list() for b in proposals], dtype=np.float64).reshape(-1, 4)
    ious = iou_matrix(props, gt_boxes)
    area_scale = chip.factor * chip.factor
    labels = []
    for row, (idx, b) in enumerate(zip(indices, proposals)):
        if not scale.valid_range.contains_area(b.area / area_scale):
            labels.append(ProposalLabel(idx, Label.IGNORE))
            continue
        if not gts:
            labels.append(ProposalLabel(idx, Label.NEGATIVE))
            continue
        best = int(np.argmax(ious[row]))
        best_iou = float(ious[row, best])
        if best_iou > iou_pos:
            g = gts[best]
            target = tuple(q(t) for t in regression_targets(b, g.box))
            labels.append(ProposalLabel(idx, Label.POSITIVE, q(best_iou), g.category, g.gt_id, target))
        else:
            labels.append(ProposalLabel(idx, Label.NEGATIVE, q(best_iou)))
    return labels


def assign_anchor_labels(
    anchors: Sequence[Box],
    chip: ChipRecord,
    iou_pos: float = DEFAULT_ANCHOR_POS,
    iou_neg: float = DEFAULT_ANCHOR_NEG,
    iou_invalid: float = DEFAULT_ANCHOR_INVALID,
) -> list[AnchorLabel]:
    """RPN anchor labels: valid ground truth assigns, invalid ground truth vetoes.

    Anchors with max IoU >= ``iou_pos`` against a valid box are positive,
    below ``iou_neg`` negative, otherwise ignored. A valid box left without a
    positive anchor promotes its unique best anchor. Finally any anchor with
    IoU >= ``iou_invalid`` against an invalid box is ignored.
    """
    if not (0 <= iou_neg <= iou_pos <= 1):
        raise ValueError(f"need 0 <= iou_neg <= iou_pos <= 1, got {iou_neg}, {iou_pos}")
    if not (0 < iou_invalid <= 1):
        raise ValueError(f"need 0 < iou_invalid <= 1, got {iou_invalid}")
    boxes = np.array([a.as_list() for a in anchors], dtype=np.float64).reshape(-1, 4)
    n = len(boxes)
    labels = np.full(n, _NEG, dtype=np.int8)
    _, valid_boxes = _gt_table(chip, valid=True)
    _, invalid_boxes = _gt_table(chip, valid=False)

    if len(valid_boxes) and n:
        ious = iou_matrix(boxes, valid_boxes)
        best = ious.max(axis=1)
        labels[best >= iou_pos] = _POS
        labels[(best >= iou_neg) & (best < iou_pos)] = _IGN
        # Valid boxes that no anchor reaches iou_pos on claim their unique best anchor.
        for j in np.flatnonzero(~(ious >= iou_pos).any(axis=0)):
            col = ious[:, j]
            top = col.max()
            winners = np.flatnonzero(col == top)
            if top > 0 and len(winners) == 1:
                labels[winners[0]] = _POS
    if len(invalid_boxes) and n:
        vetoed = (iou_matrix(boxes, invalid_boxes) >= iou_invalid).any(axis=1)
        labels[vetoed] = _IGN
    return [AnchorLabel(i, _CODES[c]) for i, c in enumerate(labels.tolist())]


def chip_proposals(
    proposals: Sequence[Proposal], chip: ChipRecord
) -> tuple[list[int], list[Box]]:
    """Map an image's proposals into chip-local coordinates, clipped to the chip.

    Returns the indices of proposals that keep at least a pixel inside the
    chip, and their clipped boxes.
    """
    frame = Box(0, 0, chip.rect_canvas.w, chip.rect_canvas.h)
    dx, dy = -chip.rect_canvas.x, -chip.rect_canvas.y
    indices, boxes = [], []
    for i, p in enumerate(proposals):
        local = clip(scale_box(p.box, chip.factor).translate(dx, dy), frame)
        if local is not None:
            indices.append(i)
            boxes.append(local)
    return indices, boxes


def label_chip(
    chip: ChipRecord,
    proposals: Sequence[Proposal],
    scale: ScaleSpec,
    iou_pos: float = DEFAULT_PROPOSAL_IOU,
) -> ChipRecord:
    """Copy of ``chip`` carrying labels for the image's proposals that fall in it."""
    indices, boxes = chip_proposals(proposals, chip)
    labels = assign_proposal_labels(boxes, chip, scale, iou_pos, indices)
    return replace(chip, labels=tuple(labels))
