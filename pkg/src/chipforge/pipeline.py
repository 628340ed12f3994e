"""Per-image mining tasks and the deterministic parallel map over a dataset."""

from __future__ import annotations

import gc
import hashlib
import json
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import __version__
from ._kernels import mine_selection
from .dataset_io import Dataset, Manifest
from .geometry import Box
from .negative import (
    CENTER,
    COVER_MODES,
    DEFAULT_MAX_NEGATIVES,
    DEFAULT_MIN_PROPOSALS,
    ENCLOSE,
    sample_indices,
)
from .pyramid import ScaleSpec, chip_grid, default_pyramid, pyramid_to_json, resolve_canvas
from .records import (
    NEGATIVE,
    POSITIVE,
    ChipRecord,
    CroppedGT,
    GroundTruth,
    ImageInfo,
    Proposal,
    make_chip_record,
)


@dataclass(frozen=True)
class MiningConfig:
    pyramid: tuple[ScaleSpec, ...] = field(default_factory=default_pyramid)
    min_proposals: int = DEFAULT_MIN_PROPOSALS
    n_max_negatives: int = DEFAULT_MAX_NEGATIVES
    score_floor: float = 0.0
    cover_mode: str = CENTER
    seed: int = 0
    epoch: int = 0

    def __post_init__(self) -> None:
        if self.min_proposals < 1:
            raise ValueError("min_proposals (M) must be >= 1")
        if self.n_max_negatives < 0:
            raise ValueError("n_max_negatives must be >= 0")
        if self.cover_mode not in COVER_MODES:
            raise ValueError(f"cover_mode must be one of {COVER_MODES}")

    def to_json(self) -> dict:
        return {
            "pyramid": pyramid_to_json(self.pyramid),
            "min_proposals": self.min_proposals,
            "n_max_negatives": self.n_max_negatives,
            "score_floor": self.score_floor,
            "cover_mode": self.cover_mode,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self, **extra) -> dict:
        return {
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "epoch": self.epoch,
            "config": self.to_json(),
            "tool_version": __version__,
            **extra,
        }


@dataclass
class ImageResult:
    image_id: int
    positives: list[ChipRecord]
    negatives: list[ChipRecord]
    pool_size: int = 0
    uncoverable: list[tuple[int, int]] = field(default_factory=list)  # (scale_index, gt_id)

    def __reduce__(self):
        return ImageResult, (self.image_id, self.positives, self.negatives, self.pool_size, self.uncoverable)


@lru_cache(maxsize=64)
def _pyramid_arrays(pyramid: tuple[ScaleSpec, ...]):
    sizes = np.array([spec.chip_size for spec in pyramid], dtype=np.float64)
    amin = np.array([spec.valid_range.area_min for spec in pyramid], dtype=np.float64)
    amax = np.array([spec.valid_range.area_max for spec in pyramid], dtype=np.float64)
    return sizes, amin, amax


@lru_cache(maxsize=8192)
def _image_geometry(width: float, height: float, pyramid: tuple[ScaleSpec, ...]):
    """Per-size canvas factors, content extents and concatenated grid origins."""
    canvases = [resolve_canvas(width, height, spec) for spec in pyramid]
    grids = [chip_grid(c, spec.chip_size, spec.stride) for c, spec in zip(canvases, pyramid)]
    factors = tuple(c.factor for c in canvases)
    extent = np.array([(c.content_w, c.content_h) for c in canvases], dtype=np.float64)
    xs_off = np.cumsum([0] + [len(g.xs) for g in grids]).astype(np.int64)
    ys_off = np.cumsum([0] + [len(g.ys) for g in grids]).astype(np.int64)
    xs_all = np.concatenate([g.xs for g in grids])
    ys_all = np.concatenate([g.ys for g in grids])
    return factors, np.array(factors, dtype=np.float64), extent, xs_all, xs_off, ys_all, ys_off


def select_image(
    image: ImageInfo,
    gts: Sequence[GroundTruth],
    proposals: Sequence[Proposal] | None,
    config: MiningConfig,
) -> tuple:
    """Chip selection for one image as plain lists, cheap to ship between processes.

    Returns ``(valid, uncoverable, rows, crops, n_pos, pool_size)`` where
    ``rows`` holds ``(scale position, ox, oy, count)`` for the positives and
    the sampled negatives, and ``crops[r]`` the ``(gt position, x, y, w, h)``
    pieces clipped to row ``r``.
    """
    pyramid = config.pyramid
    _, factors, extent, xs_all, xs_off, ys_all, ys_off = _image_geometry(image.width, image.height, pyramid)
    sizes, amin, amax = _pyramid_arrays(pyramid)

    gt_boxes = np.array([g.box for g in gts], dtype=np.float64).reshape(-1, 4)
    crowd = np.array([g.is_crowd for g in gts], dtype=np.bool_)
    if proposals and config.score_floor > 0:
        proposals = [p for p in proposals if p.score >= config.score_floor]
    prop_boxes = np.array([p.box for p in proposals or ()], dtype=np.float64).reshape(-1, 4)

    valid, uncoverable, n_pos, chips, start, crop_gt, crop_box = mine_selection(
        gt_boxes, crowd, prop_boxes, factors, extent, sizes, amin, amax,
        xs_all, xs_off, ys_all, ys_off, config.min_proposals, config.cover_mode == ENCLOSE,
    )
    n_pos = int(n_pos)
    keep = list(range(n_pos))
    pool_size = 0
    if proposals is not None:
        pool_size = len(chips) - n_pos
        picked = sample_indices(pool_size, config.n_max_negatives, config.epoch, config.seed, image.id)
        keep.extend(n_pos + i for i in picked)
    chips = chips.tolist()
    start = start.tolist()
    crop_gt = crop_gt.tolist()
    crop_box = crop_box.tolist()
    rows = [chips[r] for r in keep]
    crops = [
        [(crop_gt[c], *crop_box[c]) for c in range(start[r], start[r + 1])] for r in keep
    ]
    lost = list(zip(*np.nonzero(uncoverable))) if uncoverable.any() else []
    return valid.tolist(), [(int(s), int(i)) for s, i in lost], rows, crops, n_pos, pool_size


def assemble_image(
    image: ImageInfo, gts: Sequence[GroundTruth], selection: tuple, config: MiningConfig
) -> ImageResult:
    """Materialise the records of one image from :func:`select_image` output."""
    valid, lost, rows, crops, n_pos, pool_size = selection
    pyramid = config.pyramid
    factors = _image_geometry(image.width, image.height, pyramid)[0]
    ids = [g.id for g in gts]
    categories = [g.category for g in gts]
    new_box = tuple.__new__
    records = []
    for r, (s, ox, oy, count) in enumerate(rows):
        spec = pyramid[s]
        valid_s = valid[s]
        cropped = tuple(
            CroppedGT(ids[i], categories[i], new_box(Box, (x, y, w, h)), valid_s[i])
            for i, x, y, w, h in crops[r]
        )
        records.append(
            make_chip_record(
                image, spec.index, factors[s], ox, oy, spec.chip_size,
                POSITIVE if r < n_pos else NEGATIVE, cropped, None if count < 0 else count,
            )
        )
    return ImageResult(
        image.id,
        records[:n_pos],
        records[n_pos:],
        pool_size,
        [(pyramid[s].index, ids[i]) for s, i in lost],
    )


def mine_image(
    image: ImageInfo,
    gts: Sequence[GroundTruth],
    proposals: Sequence[Proposal] | None,
    config: MiningConfig,
) -> ImageResult:
    """Positive chips, then (when proposals are given) the sampled negatives.

    Produces the same records as composing ``positive.mine_positive``,
    ``negative.filter_covered``, ``negative.select_negative_chips`` and
    ``negative.sample_negatives``, with the selection loops fused into one
    compiled call per image.
    """
    return assemble_image(image, gts, select_image(image, gts, proposals, config), config)


# Inherited by forked workers so inputs are never pickled.
_SHARED: dict = {}


@contextmanager
def gc_paused():
    """Suspend the cyclic collector; mined records hold no reference cycles."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _select_range(bounds: tuple[int, int]) -> list[tuple]:
    ds, proposals, config = _SHARED["ds"], _SHARED["proposals"], _SHARED["config"]
    out = []
    with gc_paused():
        for image in ds.images[bounds[0] : bounds[1]]:
            props = None if proposals is None else proposals.get(image.id, [])
            out.append(select_image(image, ds.gts(image.id), props, config))
    return out


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, min(2048, -(-n // (workers * 4))))
    return [(i, min(n, i + size)) for i in range(0, n, size)]


def mine_dataset(
    ds: Dataset,
    proposals: dict[int, list[Proposal]] | None,
    config: MiningConfig,
    workers: int = 1,
) -> list[ImageResult]:
    """Mine every image; results come back in dataset order for any worker count.

    Workers only run the selection; records are assembled here while later
    chunks are still being mined, so no record objects cross process lines.
    """
    n = len(ds.images)
    _SHARED.update(ds=ds, proposals=proposals, config=config)
    try:
        with gc_paused():
            if workers <= 1 or n < 2:
                parts = map(_select_range, [(0, n)])
                return _assemble_all(ds, parts, config)
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                return _assemble_all(ds, pool.map(_select_range, _chunks(n, workers)), config)
    finally:
        _SHARED.clear()


def _assemble_all(ds: Dataset, parts, config: MiningConfig) -> list[ImageResult]:
    out = []
    images = ds.images
    for part in parts:
        for sel in part:
            image = images[len(out)]
            out.append(assemble_image(image, ds.gts(image.id), sel, config))
    return out


def build_manifest(
    results: Sequence[ImageResult], config: MiningConfig, kinds: str = "both", **extra
) -> Manifest:
    records: list[ChipRecord] = []
    for res in results:
        if kinds in ("both", "positive"):
            records.extend(res.positives)
        if kinds in ("both", "negative"):
            records.extend(res.negatives)
    return Manifest(config.header(kinds=kinds, **extra), records).sorted()


def default_workers() -> int:
    return os.cpu_count() or 1
