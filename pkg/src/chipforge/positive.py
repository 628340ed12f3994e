"""Positive chip mining: cover every range-valid ground-truth box per scale."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import greedy_cells
from .geometry import MIN_SIDE, Box
from .pyramid import AreaRange, Canvas, ChipGrid, ScaleSpec, chip_grid, resolve_canvas
from .records import (
    POSITIVE,
    ChipRecord,
    CroppedGT,
    GroundTruth,
    ImageInfo,
    make_chip_record,
    q,
)

Candidates = Sequence[Box] | ChipGrid


@dataclass
class CoverResult:
    """Chips chosen by a greedy cover, in selection order.

    ``trace`` holds ``(candidate_index, newly_covered_count)`` per step.
    """

    chips: list[Box] = field(default_factory=list)
    trace: list[tuple[int, int]] = field(default_factory=list)
    uncoverable: list = field(default_factory=list)

    @property
    def counts(self) -> list[int]:
        return [c for _, c in self.trace]


def greedy_select(cover: np.ndarray, min_count: int = 1) -> list[tuple[int, int]]:
    """Greedy maximum coverage over a boolean ``(items, candidates)`` matrix.

    Repeatedly takes the candidate containing the most still-uncovered items
    (lowest index on ties) until the best count drops below ``min_count``.
    """
    n_items, n_cand = cover.shape
    if n_items == 0 or n_cand == 0:
        return []
    uncovered = np.ones(n_items, dtype=bool)
    counts = cover.sum(axis=0, dtype=np.int64)
    steps = []
    while True:
        best = int(np.argmax(counts))
        count = int(counts[best])
        if count < min_count or count == 0:
            return steps
        steps.append((best, count))
        newly = uncovered & cover[:, best]
        uncovered &= ~newly
        counts -= cover[newly].sum(axis=0, dtype=np.int64)


def candidate_array(candidates: Candidates) -> tuple[np.ndarray, ...]:
    """Corner arrays ``(x1, y1, x2, y2)`` for an explicit candidate list."""
    arr = np.array([(c.x, c.y, c.x + c.w, c.y + c.h) for c in candidates], dtype=np.float64)
    arr = arr.reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def enclosure_matrix(x1, y1, x2, y2, candidates: Candidates) -> np.ndarray:
    """``[i, k]`` is True when candidate ``k`` encloses box ``i`` (edges inclusive)."""
    n = len(x1)
    if isinstance(candidates, ChipGrid):
        k = candidates.chip_size
        xs, ys = candidates.xs, candidates.ys
        ex = (xs[None, :] <= x1[:, None]) & (x2[:, None] <= xs[None, :] + k)
        ey = (ys[None, :] <= y1[:, None]) & (y2[:, None] <= ys[None, :] + k)
        return (ey[:, :, None] & ex[:, None, :]).reshape(n, -1)
    cx1, cy1, cx2, cy2 = candidate_array(candidates)
    return (
        (cx1[None, :] <= x1[:, None])
        & (cy1[None, :] <= y1[:, None])
        & (x2[:, None] <= cx2[None, :])
        & (y2[:, None] <= cy2[None, :])
    )


def _candidate_box(candidates: Candidates, k: int) -> Box:
    return candidates.box(k) if isinstance(candidates, ChipGrid) else candidates[k]


def valid_gts(gts: Sequence[GroundTruth], valid_range: AreaRange) -> list[GroundTruth]:
    """Non-crowd boxes whose original-coordinate area lies in ``valid_range``."""
    return [g for g in gts if not g.is_crowd and valid_range.contains_area(g.box.area)]


def _canvas_corners(boxes: np.ndarray, canvas: Canvas):
    """Scaled corners clipped to the resized content, plus the unclipped scaled sides."""
    # Same operation order as scale_box followed by x + w.
    f = canvas.factor
    x = boxes[:, 0] * f
    y = boxes[:, 1] * f
    w = boxes[:, 2] * f
    h = boxes[:, 3] * f
    return (
        np.maximum(x, 0.0),
        np.maximum(y, 0.0),
        np.minimum(x + w, float(canvas.content_w)),
        np.minimum(y + h, float(canvas.content_h)),
        w,
        h,
    )


def greedy_cover(
    valid: Sequence[GroundTruth], canvas: Canvas, candidates: Candidates
) -> CoverResult:
    """Select chips until every enclosable valid box is covered.

    Boxes are scaled onto the canvas before the enclosure test. Boxes that no
    candidate encloses, or that shrink below one pixel on this canvas, end up
    in ``result.uncoverable``.
    """
    boxes = np.array([g.box.as_list() for g in valid], dtype=np.float64).reshape(-1, 4)
    x1, y1, x2, y2, w, h = _canvas_corners(boxes, canvas)
    usable = (w >= MIN_SIDE) & (h >= MIN_SIDE)
    result = CoverResult()
    if isinstance(candidates, ChipGrid):
        cells = grid_cells(candidates, x1, y1, x2, y2, usable)
        ok = (cells[0] <= cells[1]) & (cells[2] <= cells[3])
        result.trace = grid_greedy(candidates, cells, 1)
    else:
        cover = enclosure_matrix(x1, y1, x2, y2, candidates) & usable[:, None]
        ok = cover.any(axis=1)
        result.trace = greedy_select(cover, 1)
    result.uncoverable = [g for g, fits in zip(valid, ok) if not fits]
    result.chips = [_candidate_box(candidates, k) for k, _ in result.trace]
    return result


def grid_cells(grid: ChipGrid, x1, y1, x2, y2, usable=None):
    lox, hix, loy, hiy = grid.enclosing_cells(x1, y1, x2, y2)
    if usable is not None:
        hix = np.where(usable, hix, -1)
    return lox, hix, loy, hiy


def grid_greedy(grid: ChipGrid, cells, min_count: int) -> list[tuple[int, int]]:
    """Greedy cover on a chip grid; same selections as :func:`greedy_select`."""
    lox, hix, loy, hiy = cells
    sel, cnt = greedy_cells(lox, hix, loy, hiy, grid.nx, grid.ny, min_count)
    return list(zip(sel.tolist(), cnt.tolist()))


def crop_gts(
    chip_x: float,
    chip_y: float,
    chip_size: int,
    corners: tuple[np.ndarray, ...],
    ids: Sequence[int],
    categories: Sequence[int],
    valid: np.ndarray,
) -> tuple[CroppedGT, ...]:
    """Clip canvas-space boxes to one chip; keep pieces at least a pixel wide."""
    x1, y1, x2, y2 = corners
    ix1 = np.maximum(x1, chip_x)
    iy1 = np.maximum(y1, chip_y)
    ix2 = np.minimum(x2, chip_x + chip_size)
    iy2 = np.minimum(y2, chip_y + chip_size)
    keep = np.flatnonzero(((ix2 - ix1) >= MIN_SIDE) & ((iy2 - iy1) >= MIN_SIDE))
    if not len(keep):
        return ()
    lx = (ix1[keep] - chip_x).tolist()
    ly = (iy1[keep] - chip_y).tolist()
    lw = (ix2[keep] - ix1[keep]).tolist()
    lh = (iy2[keep] - iy1[keep]).tolist()
    return tuple(
        CroppedGT(
            ids[i],
            categories[i],
            Box(q(x), q(y), q(w), q(h)),
            bool(valid[i]),
        )
        for i, x, y, w, h in zip(keep.tolist(), lx, ly, lw, lh)
    )


class GTArrays:
    """Column view of an image's ground truth, built once per image."""

    __slots__ = ("gts", "boxes", "areas", "crowd", "ids", "categories")

    def __init__(self, gts: Sequence[GroundTruth]):
        self.gts = list(gts)
        self.boxes = np.array([g.box.as_list() for g in self.gts], dtype=np.float64).reshape(-1, 4)
        self.areas = self.boxes[:, 2] * self.boxes[:, 3]
        self.crowd = np.array([g.is_crowd for g in self.gts], dtype=bool)
        self.ids = [g.id for g in self.gts]
        self.categories = [g.category for g in self.gts]

    def __len__(self) -> int:
        return len(self.gts)

    def valid_mask(self, valid_range: AreaRange) -> np.ndarray:
        return ~self.crowd & (self.areas >= valid_range.area_min) & (self.areas < valid_range.area_max)


def attach_gts(
    chip: Box, all_gts: Sequence[GroundTruth], canvas: Canvas, valid_range: AreaRange
) -> list[CroppedGT]:
    """Every ground truth overlapping ``chip``, clipped to it and flagged valid/invalid."""
    arrays = GTArrays(all_gts)
    x1, y1, x2, y2, _, _ = _canvas_corners(arrays.boxes, canvas)
    return list(
        crop_gts(
            chip.x,
            chip.y,
            int(chip.w),
            (x1, y1, x2, y2),
            arrays.ids,
            arrays.categories,
            arrays.valid_mask(valid_range),
        )
    )


@dataclass
class ScaleMining:
    """Positive chips of one scale plus the boxes they could not cover."""

    canvas: Canvas
    grid: ChipGrid
    records: list[ChipRecord]
    uncoverable: list[GroundTruth]
    corners: tuple[np.ndarray, ...]
    valid: np.ndarray


def mine_scale(image: ImageInfo, arrays: GTArrays, spec: ScaleSpec) -> ScaleMining:
    canvas = resolve_canvas(image.width, image.height, spec)
    grid = chip_grid(canvas, spec.chip_size, spec.stride)
    x1, y1, x2, y2, w, h = _canvas_corners(arrays.boxes, canvas)
    valid = arrays.valid_mask(spec.valid_range)
    idx = np.flatnonzero(valid)
    records: list[ChipRecord] = []
    uncoverable: list[GroundTruth] = []
    if len(idx):
        usable = (w[idx] >= MIN_SIDE) & (h[idx] >= MIN_SIDE)
        cells = grid_cells(grid, x1[idx], y1[idx], x2[idx], y2[idx], usable)
        coverable = (cells[0] <= cells[1]) & (cells[2] <= cells[3])
        if not coverable.all():
            uncoverable = [arrays.gts[i] for i in idx[~coverable]]
        for k, _ in grid_greedy(grid, cells, 1):
            cx, cy = grid.origin(k)
            cropped = crop_gts(cx, cy, spec.chip_size, (x1, y1, x2, y2), arrays.ids, arrays.categories, valid)
            records.append(
                make_chip_record(image, spec.index, canvas.factor, cx, cy, spec.chip_size, POSITIVE, cropped)
            )
    return ScaleMining(canvas, grid, records, uncoverable, (x1, y1, x2, y2), valid)


def mine_positive(
    image: ImageInfo, gts: Sequence[GroundTruth], pyramid: Sequence[ScaleSpec]
) -> list[ChipRecord]:
    """Positive chips of all scales, scale by scale in selection order."""
    arrays = GTArrays(gts)
    records: list[ChipRecord] = []
    for spec in pyramid:
        records.extend(mine_scale(image, arrays, spec).records)
    return records
