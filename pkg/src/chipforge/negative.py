"""Negative chip mining from externally supplied region proposals."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import boxes_in_chips, points_in_chips
from .positive import (
    Candidates,
    CoverResult,
    GTArrays,
    ScaleMining,
    _candidate_box,
    candidate_array,
    crop_gts,
    enclosure_matrix,
    greedy_select,
    grid_greedy,
    mine_scale,
)
from .pyramid import AreaRange, Canvas, ChipGrid, ScaleSpec, resolve_canvas
from .records import NEGATIVE, ChipRecord, ImageInfo, Proposal, make_chip_record

CENTER = "center"
ENCLOSE = "enclose"
COVER_MODES = (CENTER, ENCLOSE)

DEFAULT_MIN_PROPOSALS = 2
DEFAULT_MAX_NEGATIVES = 2


class ProposalArrays:
    """Column view of one image's proposals."""

    __slots__ = ("proposals", "boxes", "areas")

    def __init__(self, proposals: Sequence[Proposal]):
        self.proposals = list(proposals)
        self.boxes = np.array([p.box.as_list() for p in self.proposals], dtype=np.float64).reshape(-1, 4)
        self.areas = self.boxes[:, 2] * self.boxes[:, 3]

    def __len__(self) -> int:
        return len(self.proposals)

    def valid_mask(self, valid_range: AreaRange) -> np.ndarray:
        return (self.areas >= valid_range.area_min) & (self.areas < valid_range.area_max)

    def canvas(self, canvas: Canvas):
        """``(x1, y1, x2, y2, cx, cy)`` on ``canvas``; corners are clipped to its content."""
        f = canvas.factor
        x = self.boxes[:, 0] * f
        y = self.boxes[:, 1] * f
        w = self.boxes[:, 2] * f
        h = self.boxes[:, 3] * f
        return (
            np.maximum(x, 0.0),
            np.maximum(y, 0.0),
            np.minimum(x + w, float(canvas.content_w)),
            np.minimum(y + h, float(canvas.content_h)),
            x + w / 2,
            y + h / 2,
        )


def containment_matrix(coords, candidates: Candidates, mode: str = CENTER) -> np.ndarray:
    """``[i, k]`` is True when proposal ``i`` counts as covered by candidate ``k``."""
    x1, y1, x2, y2, cx, cy = coords
    if mode == ENCLOSE:
        return enclosure_matrix(x1, y1, x2, y2, candidates)
    if mode != CENTER:
        raise ValueError(f"unknown cover mode {mode!r}")
    n = len(cx)
    if isinstance(candidates, ChipGrid):
        k = candidates.chip_size
        xs, ys = candidates.xs, candidates.ys
        ex = (xs[None, :] <= cx[:, None]) & (cx[:, None] <= xs[None, :] + k)
        ey = (ys[None, :] <= cy[:, None]) & (cy[:, None] <= ys[None, :] + k)
        return (ey[:, :, None] & ex[:, None, :]).reshape(n, -1)
    bx1, by1, bx2, by2 = candidate_array(candidates)
    return (
        (bx1[None, :] <= cx[:, None])
        & (cx[:, None] <= bx2[None, :])
        & (by1[None, :] <= cy[:, None])
        & (cy[:, None] <= by2[None, :])
    )


def proposal_cells(grid: ChipGrid, coords, mode: str = CENTER):
    x1, y1, x2, y2, cx, cy = coords
    if mode == ENCLOSE:
        return grid.enclosing_cells(x1, y1, x2, y2)
    if mode != CENTER:
        raise ValueError(f"unknown cover mode {mode!r}")
    return grid.point_cells(cx, cy)


def _covered_mask(
    arrays: ProposalArrays,
    pos_chips: Sequence[ChipRecord],
    pyramid: Sequence[ScaleSpec],
    canvases: Sequence[Canvas],
    mode: str,
) -> np.ndarray:
    covered = np.zeros(len(arrays), dtype=bool)
    by_scale: dict[int, list[ChipRecord]] = {}
    for chip in pos_chips:
        by_scale.setdefault(chip.scale_index, []).append(chip)
    for spec, canvas in zip(pyramid, canvases):
        chips = by_scale.get(spec.index)
        if not chips or not len(arrays):
            continue
        idx = np.flatnonzero(arrays.valid_mask(spec.valid_range) & ~covered)
        if not len(idx):
            continue
        x1, y1, x2, y2, px, py = (a[idx] for a in arrays.canvas(canvas))
        ox = np.array([c.rect_canvas.x for c in chips], dtype=np.float64)
        oy = np.array([c.rect_canvas.y for c in chips], dtype=np.float64)
        size = float(chips[0].rect_canvas.w)
        if mode == CENTER:
            hit = points_in_chips(px, py, ox, oy, size)
        else:
            hit = boxes_in_chips(x1, y1, x2, y2, ox, oy, size)
        covered[idx[hit]] = True
    return covered


def filter_covered(
    proposals: Sequence[Proposal],
    pos_chips: Sequence[ChipRecord],
    image: ImageInfo,
    pyramid: Sequence[ScaleSpec],
    mode: str = CENTER,
) -> list[Proposal]:
    """Drop proposals already covered by one of the image's positive chips.

    A proposal is dropped when, at any scale where its area is valid, a
    positive chip of that scale covers it. Order is preserved.
    """
    arrays = ProposalArrays(proposals)
    canvases = [resolve_canvas(image.width, image.height, s) for s in pyramid]
    covered = _covered_mask(arrays, pos_chips, pyramid, canvases, mode)
    return [p for p, c in zip(arrays.proposals, covered) if not c]


def select_negative_chips(
    residual: Sequence[Proposal],
    canvas: Canvas,
    valid_range: AreaRange,
    candidates: Candidates,
    min_proposals: int = DEFAULT_MIN_PROPOSALS,
    mode: str = CENTER,
) -> CoverResult:
    """Greedily take every candidate that still covers ``min_proposals`` residual proposals."""
    if min_proposals < 1:
        raise ValueError("min_proposals must be >= 1")
    arrays = ProposalArrays(residual)
    idx = np.flatnonzero(arrays.valid_mask(valid_range))
    result = CoverResult()
    if not len(idx):
        return result
    coords = tuple(a[idx] for a in arrays.canvas(canvas))
    if isinstance(candidates, ChipGrid):
        result.trace = grid_greedy(candidates, proposal_cells(candidates, coords, mode), min_proposals)
    else:
        result.trace = greedy_select(containment_matrix(coords, candidates, mode), min_proposals)
    result.chips = [_candidate_box(candidates, k) for k, _ in result.trace]
    return result


@dataclass
class NegativePool:
    image_id: int
    chips: list[ChipRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.chips)

    @property
    def counts(self) -> list[int]:
        return [c.n_proposals for c in self.chips]


def negative_candidates(
    proposals: ProposalArrays,
    positive: Sequence[ScaleMining],
    pyramid: Sequence[ScaleSpec],
    min_proposals: int = DEFAULT_MIN_PROPOSALS,
    mode: str = CENTER,
) -> list[tuple[int, int, int]]:
    """Pool entries ``(scale position, grid candidate, residual count)`` before materialising."""
    if not len(proposals):
        return []
    pos_records = [r for m in positive for r in m.records]
    canvases = [m.canvas for m in positive]
    residual = ~_covered_mask(proposals, pos_records, pyramid, canvases, mode)
    entries = []
    for s, (spec, mined) in enumerate(zip(pyramid, positive)):
        idx = np.flatnonzero(residual & proposals.valid_mask(spec.valid_range))
        if len(idx) < min_proposals:
            continue
        coords = tuple(a[idx] for a in proposals.canvas(mined.canvas))
        cells = proposal_cells(mined.grid, coords, mode)
        entries.extend((s, k, count) for k, count in grid_greedy(mined.grid, cells, min_proposals))
    return entries


def materialize(
    image: ImageInfo,
    gt_arrays: GTArrays,
    positive: Sequence[ScaleMining],
    pyramid: Sequence[ScaleSpec],
    entry: tuple[int, int, int],
) -> ChipRecord:
    s, k, count = entry
    spec, mined = pyramid[s], positive[s]
    cx, cy = mined.grid.origin(k)
    cropped = crop_gts(cx, cy, spec.chip_size, mined.corners, gt_arrays.ids, gt_arrays.categories, mined.valid)
    return make_chip_record(image, spec.index, mined.canvas.factor, cx, cy, spec.chip_size, NEGATIVE, cropped, count)


def negative_pool(
    image: ImageInfo,
    gt_arrays: GTArrays,
    proposals: ProposalArrays,
    positive: Sequence[ScaleMining],
    pyramid: Sequence[ScaleSpec],
    min_proposals: int = DEFAULT_MIN_PROPOSALS,
    mode: str = CENTER,
) -> NegativePool:
    """Negative chips of every scale for one image, given its positive mining."""
    entries = negative_candidates(proposals, positive, pyramid, min_proposals, mode)
    return NegativePool(image.id, [materialize(image, gt_arrays, positive, pyramid, e) for e in entries])


def build_negative_pool(
    image: ImageInfo,
    gts,
    proposals: Sequence[Proposal],
    pyramid: Sequence[ScaleSpec],
    min_proposals: int = DEFAULT_MIN_PROPOSALS,
    mode: str = CENTER,
    score_floor: float = 0.0,
) -> NegativePool:
    """Positive mining followed by negative mining for a single image."""
    gt_arrays = GTArrays(gts)
    positive = [mine_scale(image, gt_arrays, spec) for spec in pyramid]
    kept = [p for p in proposals if p.score >= score_floor]
    return negative_pool(image, gt_arrays, ProposalArrays(kept), positive, pyramid, min_proposals, mode)


def sample_seed(seed: int, epoch: int, image_id: int) -> int:
    """Stateless per-image RNG seed; independent of scheduling order."""
    digest = hashlib.blake2b(f"{seed}:{epoch}:{image_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def sample_indices(n: int, n_max: int, epoch: int, seed: int, image_id: int) -> list[int]:
    """Sorted indices of ``min(n_max, n)`` pool chips drawn without replacement."""
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if n <= n_max:
        return list(range(n))
    rng = random.Random(sample_seed(seed, epoch, image_id))
    return sorted(rng.sample(range(n), n_max))


def sample_negatives(pool: NegativePool, n_max: int, epoch: int, seed: int) -> list[ChipRecord]:
    """Uniform sample of ``min(n_max, len(pool))`` chips, stable per (seed, epoch, image)."""
    return [pool.chips[i] for i in sample_indices(len(pool.chips), n_max, epoch, seed, pool.image_id)]
