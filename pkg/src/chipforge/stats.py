"""Pixel/chip accounting, synthetic scenes, exhaustive oracles and benchmarks."""

from __future__ import annotations

import csv
import itertools
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset_io import Dataset
from .errors import InstanceTooLarge, UnknownImage
from .geometry import Box, clip, encloses, iou, scale_box
from .pyramid import Canvas, ScaleSpec, resolve_canvas, round_half_up
from .positive import valid_gts
from .records import NEGATIVE, POSITIVE, ChipRecord, GroundTruth, ImageInfo, Proposal

BASELINE = (800, 1333)


def baseline_pixels(width: float, height: float, short: int = 800, long: int = 1333) -> int:
    """Pixels of a single-scale resize: shorter side to ``short``, longer side capped at ``long``."""
    s = min(short / min(width, height), long / max(width, height))
    return round_half_up(width * s) * round_half_up(height * s)


@dataclass
class PixelReport:
    n_images: int
    n_chips: int
    total_chip_pixels: int
    baseline_pixels: int
    ratio: float
    chips_per_image: dict
    per_scale: dict
    per_kind: dict
    baseline: tuple[int, int] = BASELINE
    notes: str = "chip pixels are counted in full, zero padding included"

    def to_json(self) -> dict:
        out = asdict(self)
        out["baseline"] = list(self.baseline)
        return out


def pixel_report(
    records: Iterable[ChipRecord], ds: Dataset, baseline: tuple[int, int] = BASELINE
) -> PixelReport:
    images = ds.image_map()
    per_image = Counter()
    per_scale = Counter()
    per_kind = Counter()
    total = 0
    n_chips = 0
    for r in records:
        if r.image_id not in images:
            raise UnknownImage(f"record references unknown image id {r.image_id}")
        per_image[r.image_id] += 1
        per_scale[r.scale_index] += 1
        per_kind[r.kind] += 1
        total += int(r.rect_canvas.w) * int(r.rect_canvas.h)
        n_chips += 1
    base = sum(baseline_pixels(im.width, im.height, *baseline) for im in ds.images)
    counts = [per_image.get(im.id, 0) for im in ds.images]
    hist = Counter(counts)
    return PixelReport(
        n_images=len(ds.images),
        n_chips=n_chips,
        total_chip_pixels=total,
        baseline_pixels=base,
        ratio=total / base if base else 0.0,
        chips_per_image={
            "mean": sum(counts) / len(counts) if counts else 0.0,
            "min": min(counts, default=0),
            "max": max(counts, default=0),
            "histogram": {str(k): hist[k] for k in sorted(hist)},
        },
        per_scale={str(k): per_scale[k] for k in sorted(per_scale)},
        per_kind={k: per_kind.get(k, 0) for k in (POSITIVE, NEGATIVE)},
        baseline=tuple(baseline),
    )


def format_report(rep: PixelReport) -> str:
    cpi = rep.chips_per_image
    rows = [
        ("images", f"{rep.n_images}"),
        ("chips", f"{rep.n_chips}"),
        ("  positive", f"{rep.per_kind.get(POSITIVE, 0)}"),
        ("  negative", f"{rep.per_kind.get(NEGATIVE, 0)}"),
        *((f"  scale {k}", f"{v}") for k, v in rep.per_scale.items()),
        ("chips/image mean", f"{cpi['mean']:.3f}"),
        ("chips/image min/max", f"{cpi['min']}/{cpi['max']}"),
        ("chip pixels", f"{rep.total_chip_pixels}"),
        (f"baseline pixels ({rep.baseline[0]}x{rep.baseline[1]})", f"{rep.baseline_pixels}"),
        ("ratio", f"{rep.ratio:.4f}"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def write_histogram_csv(rep: PixelReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["chips_per_image", "n_images"])
        for k, v in rep.chips_per_image["histogram"].items():
            w.writerow([k, v])


# -- coverage oracle -------------------------------------------------------------


@dataclass
class CoverageReport:
    required: int = 0
    covered: int = 0
    geometric_misses: list[tuple[int, int, int]] = field(default_factory=list)
    missed: list[tuple[int, int, int]] = field(default_factory=list)  # (image, scale, gt)

    @property
    def complete(self) -> bool:
        return not self.missed

    def to_json(self) -> dict:
        return {
            "required": self.required,
            "covered": self.covered,
            "complete": self.complete,
            "geometrically_uncoverable": len(self.geometric_misses),
        }


def _on_canvas(b: Box, canvas: Canvas, chip_size: int) -> Box | None:
    """The scaled box clipped to the resized content, or None when no chip can hold it."""
    scaled = scale_box(b, canvas.factor)
    if scaled.w < 1 or scaled.h < 1:
        return None
    part = clip(scaled, Box(0.0, 0.0, canvas.content_w, canvas.content_h))
    if part is None or part.w > chip_size or part.h > chip_size:
        return None
    return part


def check_coverage(
    records: Iterable[ChipRecord], ds: Dataset, pyramid: Sequence[ScaleSpec]
) -> CoverageReport:
    """Check with plain box predicates that every range-valid box sits inside a positive chip.

    Scaled boxes are clipped to the resized content first, since rounding the
    canvas size can shave a sliver off a box touching the image border.
    Boxes that still cannot fit a chip are listed separately and do not count
    as required.
    """
    chips: dict[tuple[int, int], list[Box]] = {}
    for r in records:
        if r.kind == POSITIVE:
            chips.setdefault((r.image_id, r.scale_index), []).append(r.rect_canvas)
    rep = CoverageReport()
    for image in ds.images:
        gts = ds.gts(image.id)
        if not gts:
            continue
        for spec in pyramid:
            canvas = resolve_canvas(image.width, image.height, spec)
            mine = chips.get((image.id, spec.index), [])
            for g in valid_gts(gts, spec.valid_range):
                b = _on_canvas(g.box, canvas, spec.chip_size)
                key = (image.id, spec.index, g.id)
                if b is None:
                    rep.geometric_misses.append(key)
                    continue
                rep.required += 1
                if any(encloses(c, b) for c in mine):
                    rep.covered += 1
                else:
                    rep.missed.append(key)
    return rep


# -- exhaustive set-cover oracle -------------------------------------------------

MAX_ORACLE_CANDIDATES = 20
MAX_ORACLE_BOXES = 10


@dataclass
class BruteForceCover:
    min_cover_size: int
    per_step_argmax: list[tuple[int, int]]  # (first argmax candidate, its count)
    per_step_max: list[int]


def brute_force_cover(
    valid: Sequence[GroundTruth], candidates: Sequence[Box], canvas: Canvas
) -> BruteForceCover:
    """Exact minimum cover and the greedy argmax trace, by enumeration."""
    if len(candidates) > MAX_ORACLE_CANDIDATES or len(valid) > MAX_ORACLE_BOXES:
        raise InstanceTooLarge(
            f"oracle bound is {MAX_ORACLE_CANDIDATES} candidates / {MAX_ORACLE_BOXES} boxes, "
            f"got {len(candidates)} / {len(valid)}"
        )
    scaled = [scale_box(g.box, canvas.factor) for g in valid]
    sets = [
        frozenset(i for i, b in enumerate(scaled) if b.w >= 1 and b.h >= 1 and encloses(c, b))
        for c in candidates
    ]
    target = frozenset().union(*sets)

    steps, maxima = [], []
    uncovered = set(target)
    while uncovered:
        best, best_count = -1, 0
        for k, s in enumerate(sets):
            n = len(s & uncovered)
            if n > best_count:
                best, best_count = k, n
        steps.append((best, best_count))
        maxima.append(max(len(s & uncovered) for s in sets))
        uncovered -= sets[best]

    distinct = {s for s in sets if s}
    useful = [s for s in distinct if not any(s < t for t in distinct)]
    minimum = 0
    if target:
        for size in range(1, len(useful) + 1):
            if any(frozenset().union(*combo) == target for combo in itertools.combinations(useful, size)):
                minimum = size
                break
    return BruteForceCover(minimum, steps, maxima)


def greedy_bound(min_cover: int, n_boxes: int) -> float:
    """Classical greedy set-cover guarantee ``OPT * (1 + ln n)``."""
    return min_cover * (1 + math.log(n_boxes)) if n_boxes else 0.0


# -- synthetic scenes ------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    n_images: int = 100
    width_range: tuple[int, int] = (320, 640)
    height_range: tuple[int, int] = (240, 640)
    boxes_mean: float = 7.0
    boxes_max: int = 30
    side_range: tuple[float, float] = (8.0, 400.0)
    max_aspect: float = 3.0
    noise_rate: float = 20.0
    crowd_rate: float = 0.0
    # When set, images have this long side (landscape 70% of the time) and
    # the short side is drawn from height_range, as in COCO.
    long_side: int | None = None

    @classmethod
    def coco_shaped(cls, n_images: int) -> SynthParams:
        """640 px long side and about 7.3 boxes per image."""
        return cls(n_images=n_images, long_side=640, height_range=(320, 640), boxes_mean=7.3)


def _random_box(rng: np.random.Generator, p: SynthParams, width: int, height: int) -> Box:
    lo, hi = p.side_range
    side = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    aspect = math.exp(rng.uniform(-math.log(p.max_aspect), math.log(p.max_aspect)))
    w = min(max(2.0, side * math.sqrt(aspect)), width)
    h = min(max(2.0, side / math.sqrt(aspect)), height)
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return Box(round(x, 2), round(y, 2), round(w, 2), round(h, 2))


def synth_scenes(
    params: SynthParams = SynthParams(), seed: int = 0
) -> tuple[Dataset, dict[int, list[Proposal]]]:
    """Deterministic synthetic corpus.

    Every ground-truth box is also emitted as a proposal; background noise
    proposals (Poisson with mean ``noise_rate`` per image) are drawn away from
    ground truth where possible.
    """
    rng = np.random.default_rng(seed)
    images, annotations, proposals = [], {}, {}
    ann_id = 1
    for image_id in range(1, params.n_images + 1):
        if params.long_side is None:
            width = int(rng.integers(params.width_range[0], params.width_range[1] + 1))
            height = int(rng.integers(params.height_range[0], params.height_range[1] + 1))
        else:
            width = params.long_side
            height = int(rng.integers(params.height_range[0], min(params.height_range[1], width) + 1))
            if rng.random() >= 0.7:
                width, height = height, width
        images.append(ImageInfo(image_id, width, height, f"synth_{image_id:06d}.jpg"))
        n_boxes = min(int(rng.poisson(params.boxes_mean)), params.boxes_max)
        gts, props = [], []
        for _ in range(n_boxes):
            box = _random_box(rng, params, width, height)
            gts.append(GroundTruth(ann_id, box, int(rng.integers(1, 81)), bool(rng.random() < params.crowd_rate)))
            props.append(Proposal(image_id, box, round(float(rng.uniform(0.5, 1.0)), 4)))
            ann_id += 1
        for _ in range(int(rng.poisson(params.noise_rate)) if params.noise_rate > 0 else 0):
            for _attempt in range(10):
                box = _random_box(rng, params, width, height)
                if all(iou(box, g.box) == 0 for g in gts):
                    break
            props.append(Proposal(image_id, box, round(float(rng.uniform(0.0, 1.0)), 4)))
        if gts:
            annotations[image_id] = gts
        if props:
            proposals[image_id] = props
    return Dataset(images=images, annotations=annotations), proposals


# -- throughput ------------------------------------------------------------------


@dataclass
class BenchResult:
    n_images: int
    workers: int
    wall_time: float
    images_per_second: float
    runs: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def bench_throughput(ds: Dataset, proposals, config, workers: int = 1, repeats: int = 1) -> BenchResult:
    """Time end-to-end mining (positives and sampled negatives); warmup excluded."""
    from .pipeline import mine_dataset

    n = len(ds.images)
    if n == 0:
        return BenchResult(0, workers, 0.0, 0.0)
    warm = Dataset(images=ds.images[: min(100, n)], annotations=ds.annotations)
    mine_dataset(warm, proposals, config, workers=1)
    runs = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        mine_dataset(ds, proposals, config, workers=workers)
        runs.append(time.perf_counter() - t0)
    best = min(runs)
    return BenchResult(n, workers, best, n / best if best > 0 else 0.0, runs)
