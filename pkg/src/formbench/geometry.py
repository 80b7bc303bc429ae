"""Normalized-coordinate points and axis-aligned boxes.

All document geometry uses fractions of image width/height: (0, 0) is the
top-left corner and (1, 1) the bottom-right. Pixel boxes are half-open
integer rectangles [px0, px1) x [py0, py1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from formbench.errors import InvalidBoxError, InvalidImageDimensionsError

__all__ = [
    "Point",
    "BBox",
    "PixelBBox",
    "center",
    "contains",
    "normalize",
    "denormalize",
    "boxes_disjoint",
]


@dataclass(frozen=True)
class Point:
    """A point in normalized page coordinates.

    Out-of-range points are representable (the editor reports them as
    out of bounds rather than refusing to parse them).
    """

    x: float
    y: float

    @property
    def in_unit_square(self) -> bool:
        return 0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0

    def as_list(self) -> list[float]:
        return [self.x, self.y]


@dataclass(frozen=True)
class BBox:
    """A non-degenerate axis-aligned box in normalized page coordinates.

    Serialized everywhere as a 4-element array [x0, y0, x1, y1].
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise InvalidBoxError(
                f"invalid bbox ({self.x0}, {self.y0}, {self.x1}, {self.y1}): "
                "need 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise InvalidBoxError(f"bbox must have 4 elements, got {len(values)}")
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))


@dataclass(frozen=True)
class PixelBBox:
    """A non-degenerate half-open pixel rectangle."""

    px0: int
    py0: int
    px1: int
    py1: int

    def __post_init__(self) -> None:
        if not (0 <= self.px0 < self.px1 and 0 <= self.py0 < self.py1):
            raise InvalidBoxError(
                f"invalid pixel bbox ({self.px0}, {self.py0}, {self.px1}, {self.py1})"
            )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.px0, self.py0, self.px1, self.py1)


def center(b: BBox) -> Point:
    """Midpoint of a box."""
    return Point((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0)


def contains(b: BBox, p: Point) -> bool:
    """Closed containment: boundary points count as inside."""
    return b.x0 <= p.x <= b.x1 and b.y0 <= p.y <= b.y1


def boxes_disjoint(a: BBox, b: BBox) -> bool:
    """True when box interiors do not overlap (touching edges allowed)."""
    return not (a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1)


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise InvalidImageDimensionsError(f"invalid image dimensions {width}x{height}")


def normalize(pb: PixelBBox, width: int, height: int) -> BBox:
    """Convert a pixel box to normalized fractions of the image size."""
    _check_dims(width, height)
    if pb.px1 > width or pb.py1 > height:
        raise InvalidBoxError(f"pixel bbox {pb.as_tuple()} exceeds image {width}x{height}")
    return BBox(pb.px0 / width, pb.py0 / height, pb.px1 / width, pb.py1 / height)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def denormalize(b: BBox, width: int, height: int) -> PixelBBox:
    """Convert a normalized box to the nearest pixel rectangle.

    The result is clamped to the image bounds and never degenerate: a box
    narrower than one pixel maps to a 1-px-wide rectangle.
    """
    _check_dims(width, height)
    px0 = min(max(_round_half_up(b.x0 * width), 0), width)
    px1 = min(max(_round_half_up(b.x1 * width), 0), width)
    py0 = min(max(_round_half_up(b.y0 * height), 0), height)
    py1 = min(max(_round_half_up(b.y1 * height), 0), height)
    if px1 <= px0:
        if px1 < width:
            px1 = px0 + 1
        else:
            px0 = px1 - 1
    if py1 <= py0:
        if py1 < height:
            py1 = py0 + 1
        else:
            py0 = py1 - 1
    return PixelBBox(px0, py0, px1, py1)
