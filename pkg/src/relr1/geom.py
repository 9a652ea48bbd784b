"""Axis-aligned integer bounding boxes, areas, and exact IoU."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Pixel rectangle in (x1, y1, x2, y2) top-left/bottom-right order.

    A box is either the ungrounded sentinel [-1, -1, -1, -1] or satisfies
    0 <= x1 <= x2 and 0 <= y1 <= y2 under the continuous-edge convention,
    so [0, 0, 1, 1] has area 1.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if any(not isinstance(c, int) or isinstance(c, bool) for c in coords):
            raise ValueError(f"box coordinates must be integers, got {coords!r}")
        if coords == (-1, -1, -1, -1):
            return
        if min(coords) < 0:
            raise ValueError(f"negative coordinate in non-sentinel box {coords!r}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box {coords!r}")

    @property
    def is_sentinel(self) -> bool:
        return (self.x1, self.y1, self.x2, self.y2) == (-1, -1, -1, -1)

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, coords) -> "BoundingBox":
        if len(coords) != 4:
            raise ValueError(f"expected 4 coordinates, got {len(coords)}")
        return cls(*(int(c) for c in coords))

    def shifted(self, dx1: int, dy1: int, dx2: int, dy2: int) -> "BoundingBox":
        if self.is_sentinel:
            return self
        return BoundingBox(self.x1 + dx1, self.y1 + dy1, self.x2 + dx2, self.y2 + dy2)


SENTINEL_BOX = BoundingBox(-1, -1, -1, -1)


def area(b: BoundingBox) -> int:
    """(x2-x1)*(y2-y1) in square pixels; 0 for the sentinel."""
    if b.is_sentinel:
        return 0
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a: BoundingBox, b: BoundingBox) -> Fraction:
    """Exact intersection-over-union of two boxes.

    Returned as a Fraction so threshold comparisons such as ``iou(a, b) >= 0.5``
    are tie-stable. Sentinel or zero-area operands yield 0 even when the
    coordinates coincide: degenerate boxes earn no localization credit.
    """
    area_a = area(a)
    area_b = area(b)
    if area_a == 0 or area_b == 0:
        return Fraction(0)
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return Fraction(0)
    inter = ix * iy
    return Fraction(inter, area_a + area_b - inter)
