"""Axis-aligned rectangle arithmetic.

Boxes are ``(x, y, w, h)`` with the origin at the top-left corner.
Coordinates are real-valued; width and height are strictly positive.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

# Clipped boxes thinner than this (pixels) carry no signal and are dropped.
MIN_SIDE = 1.0

# Decimal grid that annotations and manifests live on.
DECIMALS = 6
_GRID = 10.0**DECIMALS


def snap(v: float) -> float:
    """Nearest double to ``v`` rounded half-even to DECIMALS places."""
    return round(v * _GRID) / _GRID


class _BoxFields(NamedTuple):
    x: float
    y: float
    w: float
    h: float


class Box(_BoxFields):
    """Immutable ``(x, y, w, h)`` rectangle; construction rejects degenerate boxes."""

    __slots__ = ()

    def __new__(cls, x: float, y: float, w: float, h: float) -> Box:
        if not (w > 0 and h > 0):
            raise ValueError(f"degenerate box ({x}, {y}, {w}, {h})")
        # A single sum catches any inf/nan component.
        if not math.isfinite(x + y + w + h):
            raise ValueError(f"non-finite box ({x}, {y}, {w}, {h})")
        return tuple.__new__(cls, (x, y, w, h))

    def __reduce__(self):
        return trusted_box, tuple(self)

    def __repr__(self) -> str:
        return f"Box({self.x!r}, {self.y!r}, {self.w!r}, {self.h!r})"

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def contains_point(self, px: float, py: float) -> bool:
        """Boundary-inclusive point test."""
        return self.x <= px <= self.x2 and self.y <= py <= self.y2

    def translate(self, dx: float, dy: float) -> Box:
        return Box(self.x + dx, self.y + dy, self.w, self.h)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> Box:
        return cls(x1, y1, x2 - x1, y2 - y1)


def trusted_box(x: float, y: float, w: float, h: float) -> Box:
    """Build a Box from values already known to be finite and positive-sized."""
    return tuple.__new__(Box, (x, y, w, h))


def intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return min(1.0, inter / (a.area + b.area - inter))


def encloses(outer: Box, inner: Box) -> bool:
    """True when ``inner`` lies completely inside ``outer`` (edges count)."""
    return (
        outer.x <= inner.x
        and outer.y <= inner.y
        and inner.x + inner.w <= outer.x + outer.w
        and inner.y + inner.h <= outer.y + outer.h
    )


def clip(b: Box, frame: Box) -> Box | None:
    """Intersection of ``b`` with ``frame``, or None if thinner than a pixel."""
    x1 = max(b.x, frame.x)
    y1 = max(b.y, frame.y)
    x2 = min(b.x2, frame.x2)
    y2 = min(b.y2, frame.y2)
    if x2 - x1 < MIN_SIDE or y2 - y1 < MIN_SIDE:
        return None
    return Box(x1, y1, _span(x1, x2), _span(y1, y2))


def _span(lo: float, hi: float) -> float:
    # hi - lo can round up so that lo + span lands an ulp past hi.
    span = hi - lo
    while lo + span > hi:
        span = math.nextafter(span, 0.0)
    return span


def scale_box(b: Box, factor: float) -> Box:
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return Box(b.x * factor, b.y * factor, b.w * factor, b.h * factor)


def flip_box(b: Box, image_width: float) -> Box:
    """Mirror ``b`` horizontally inside an image ``image_width`` pixels wide.

    The new x is snapped to the 6-decimal grid, which makes the flip an exact
    involution for inputs on that grid (any COCO-style annotation). No float
    formula can be exact for every double.
    """
    return Box(snap(image_width - b.w - b.x), b.y, b.w, b.h)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two ``(n, 4)`` / ``(m, 4)`` xywh arrays -> ``(n, m)``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.where(inter > 0, np.minimum(1.0, inter / np.where(inter > 0, union, 1.0)), 0.0)
