"""Scale configuration, per-scale canvases and chip grids."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np

from .errors import MalformedInput
from .geometry import Box

DEFAULT_CHIP_SIZE = 512
DEFAULT_STRIDE = 32


@dataclass(frozen=True)
class FitLongSide:
    """Resize so the longer image side equals ``target`` pixels."""

    target: float

    def factor(self, image_w: float, image_h: float) -> float:
        return self.target / max(image_w, image_h)

    def to_json(self) -> dict:
        return {"fit_long_side": self.target}


@dataclass(frozen=True)
class Factor:
    """Resize by a fixed factor."""

    value: float

    def factor(self, image_w: float, image_h: float) -> float:
        return self.value

    def to_json(self) -> dict:
        return {"factor": self.value}


ResizeRule = Union[FitLongSide, Factor]


@dataclass(frozen=True)
class AreaRange:
    """Side-length bounds of valid boxes: ``r_min**2 <= w*h < r_max**2``.

    ``r_max`` may be ``math.inf``. Areas are measured in original image
    coordinates.
    """

    r_min: float
    r_max: float = math.inf

    def __post_init__(self) -> None:
        if not (0 <= self.r_min < self.r_max):
            raise ValueError(f"bad area range [{self.r_min}, {self.r_max})")

    @property
    def area_min(self) -> float:
        return self.r_min * self.r_min

    @property
    def area_max(self) -> float:
        return self.r_max * self.r_max

    def contains_area(self, area: float) -> bool:
        return self.area_min <= area < self.area_max

    def to_json(self) -> dict:
        return {"r_min": self.r_min, "r_max": None if math.isinf(self.r_max) else self.r_max}


@dataclass(frozen=True)
class ScaleSpec:
    index: int
    rule: ResizeRule
    valid_range: AreaRange
    chip_size: int = DEFAULT_CHIP_SIZE
    stride: int = DEFAULT_STRIDE

    def __post_init__(self) -> None:
        if self.chip_size <= 0 or self.stride <= 0 or self.stride > self.chip_size:
            raise ValueError(
                f"scale {self.index}: need 0 < stride <= chip_size, "
                f"got stride={self.stride} chip_size={self.chip_size}"
            )
        if not isinstance(self.rule, (FitLongSide, Factor)):
            raise TypeError(f"unknown resize rule {self.rule!r}")
        value = self.rule.target if isinstance(self.rule, FitLongSide) else self.rule.value
        if not value > 0:
            raise ValueError(f"scale {self.index}: resize value must be positive")

    def to_json(self) -> dict:
        return {
            "rule": self.rule.to_json(),
            "chip_size": self.chip_size,
            "stride": self.stride,
            **self.valid_range.to_json(),
        }


@dataclass(frozen=True)
class Canvas:
    scale_index: int
    factor: float
    content_w: int
    content_h: int
    grid_w: int
    grid_h: int

    @property
    def pad_right(self) -> int:
        return self.grid_w - self.content_w

    @property
    def pad_bottom(self) -> int:
        return self.grid_h - self.content_h


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def resolve_canvas(image_w: float, image_h: float, spec: ScaleSpec) -> Canvas:
    if not (image_w >= 1 and image_h >= 1):
        raise ValueError(f"image dimensions must be >= 1, got {image_w}x{image_h}")
    factor = spec.rule.factor(image_w, image_h)
    content_w = max(1, round_half_up(image_w * factor))
    content_h = max(1, round_half_up(image_h * factor))
    return Canvas(
        scale_index=spec.index,
        factor=factor,
        content_w=content_w,
        content_h=content_h,
        grid_w=max(content_w, spec.chip_size),
        grid_h=max(content_h, spec.chip_size),
    )


@lru_cache(maxsize=4096)
def axis_positions(dim: int, chip_size: int, stride: int) -> tuple[int, ...]:
    """Chip origins along one axis: multiples of ``stride`` plus a flush final one."""
    last = dim - chip_size
    if last < 0:
        raise ValueError(f"axis of {dim} px cannot hold a {chip_size} px chip")
    positions = list(range(0, last + 1, stride))
    if positions[-1] != last:
        positions.append(last)
    return tuple(positions)


@dataclass(frozen=True, eq=False)
class ChipGrid:
    """Row-major lattice of square chips on a canvas.

    Candidate ``k`` sits at ``(xs[k % nx], ys[k // nx])``.
    """

    xs: np.ndarray
    ys: np.ndarray
    chip_size: int
    xs_end: np.ndarray = field(init=False, repr=False, compare=False)
    ys_end: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "xs_end", self.xs + self.chip_size)
        object.__setattr__(self, "ys_end", self.ys + self.chip_size)

    @property
    def nx(self) -> int:
        return len(self.xs)

    @property
    def ny(self) -> int:
        return len(self.ys)

    def enclosing_cells(self, x1, y1, x2, y2):
        """Per box, the column/row index ranges of chips that enclose it.

        Compares against exact integer chip edges, so the result agrees with
        :func:`~chipforge.geometry.encloses` on every float input.
        """
        lox = np.searchsorted(self.xs_end, x2, "left")
        hix = np.searchsorted(self.xs, x1, "right") - 1
        loy = np.searchsorted(self.ys_end, y2, "left")
        hiy = np.searchsorted(self.ys, y1, "right") - 1
        return lox, hix, loy, hiy

    def point_cells(self, px, py):
        """Per point, the column/row index ranges of chips containing it."""
        lox = np.searchsorted(self.xs_end, px, "left")
        hix = np.searchsorted(self.xs, px, "right") - 1
        loy = np.searchsorted(self.ys_end, py, "left")
        hiy = np.searchsorted(self.ys, py, "right") - 1
        return lox, hix, loy, hiy

    def __len__(self) -> int:
        return len(self.xs) * len(self.ys)

    def origin(self, k: int) -> tuple[int, int]:
        nx = len(self.xs)
        return int(self.xs[k % nx]), int(self.ys[k // nx])

    def box(self, k: int) -> Box:
        x, y = self.origin(k)
        return Box(x, y, self.chip_size, self.chip_size)

    def boxes(self) -> list[Box]:
        return [Box(int(x), int(y), self.chip_size, self.chip_size) for y in self.ys for x in self.xs]


@lru_cache(maxsize=4096)
def _grid(grid_w: int, grid_h: int, chip_size: int, stride: int) -> ChipGrid:
    xs = np.array(axis_positions(grid_w, chip_size, stride), dtype=np.float64)
    ys = np.array(axis_positions(grid_h, chip_size, stride), dtype=np.float64)
    xs.flags.writeable = False
    ys.flags.writeable = False
    return ChipGrid(xs, ys, chip_size)


def chip_grid(canvas: Canvas, chip_size: int, stride: int) -> ChipGrid:
    if stride > chip_size:
        raise ValueError("stride must not exceed chip size")
    return _grid(canvas.grid_w, canvas.grid_h, chip_size, stride)


def grid_chips(canvas: Canvas, chip_size: int, stride: int) -> list[Box]:
    """All candidate chips of a canvas in row-major order (canvas coordinates)."""
    return chip_grid(canvas, chip_size, stride).boxes()


# -- configuration files -----------------------------------------------------


def _rule_from_json(obj, where: str) -> ResizeRule:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise MalformedInput("rule must be {'fit_long_side': t} or {'factor': s}", where)
    (kind, value), = obj.items()
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise MalformedInput(f"rule value must be a positive number, got {value!r}", where)
    if kind == "fit_long_side":
        return FitLongSide(float(value))
    if kind == "factor":
        return Factor(float(value))
    raise MalformedInput(f"unknown rule {kind!r}", where)


def pyramid_from_json(entries) -> tuple[ScaleSpec, ...]:
    if isinstance(entries, dict):
        entries = entries.get("scales")
    if not isinstance(entries, list) or not entries:
        raise MalformedInput("pyramid config must be a non-empty list of scales")
    scales = []
    for i, entry in enumerate(entries):
        where = f"scales[{i}]"
        if not isinstance(entry, dict):
            raise MalformedInput("scale entry must be an object", where)
        try:
            r_max = entry.get("r_max")
            scales.append(
                ScaleSpec(
                    index=i + 1,
                    rule=_rule_from_json(entry.get("rule"), f"{where}.rule"),
                    valid_range=AreaRange(
                        float(entry.get("r_min", 0.0)),
                        math.inf if r_max is None else float(r_max),
                    ),
                    chip_size=int(entry.get("chip_size", DEFAULT_CHIP_SIZE)),
                    stride=int(entry.get("stride", DEFAULT_STRIDE)),
                )
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MalformedInput):
                raise
            raise MalformedInput(str(exc), where) from exc
    return tuple(scales)


def pyramid_to_json(pyramid) -> list[dict]:
    return [s.to_json() for s in pyramid]


def load_pyramid(path: str | Path) -> tuple[ScaleSpec, ...]:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"invalid JSON: {exc}", str(path)) from exc
    return pyramid_from_json(data)


def builtin_pyramid(name: str = "coco_3scale") -> tuple[ScaleSpec, ...]:
    """Load one of the shipped configs: ``coco_3scale`` (3 scales) or ``two_scale``."""
    text = resources.files("chipforge.configs").joinpath(f"{name}.json").read_text("utf-8")
    return pyramid_from_json(json.loads(text))


def default_pyramid() -> tuple[ScaleSpec, ...]:
    return builtin_pyramid("coco_3scale")
