"""Box geometry behind the absolute and relative region captions."""
from __future__ import annotations

from enum import Enum
from fractions import Fraction

from .exceptions import CoincidentTargets
from .records import BoundingBox


class RegionLabel(Enum):
    # declaration order is the IoU tie-break order
    UPPER_LEFT = 'upper left'
    UPPER_RIGHT = 'upper right'
    BOTTOM_LEFT = 'bottom left'
    BOTTOM_RIGHT = 'bottom right'
    CENTER = 'center'

    @property
    def phrase(self):
        return self.value


class Direction(Enum):
    ABOVE = 'above'
    BELOW = 'below'
    LEFT = 'left'
    RIGHT = 'right'

    @property
    def phrase(self):
        if self in (Direction.LEFT, Direction.RIGHT):
            return f'to the {self.value} of'
        return self.value

    def opposite(self):
        return _OPPOSITES[self]


_OPPOSITES = {
    Direction.ABOVE: Direction.BELOW,
    Direction.BELOW: Direction.ABOVE,
    Direction.LEFT: Direction.RIGHT,
    Direction.RIGHT: Direction.LEFT,
}


def overlap(a: BoundingBox, b: BoundingBox):
    """Return (intersection, union) pixel areas of two half-open boxes."""
    inter_w = max(0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    inter_h = max(0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = inter_w * inter_h
    return inter, a.area + b.area - inter


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter, union = overlap(a, b)
    if union <= 0:
        return 0.0
    return inter / union


def region_boxes(width: int, height: int):
    """The five regions of a ``width`` x ``height`` image.

    Quadrants are the half-size corner rectangles; the center region is a
    half-size rectangle centered in the image and overlaps all four.
    """
    half_w = max(1, width // 2)
    half_h = max(1, height // 2)
    left = (width - half_w) // 2
    top = (height - half_h) // 2
    return {
        RegionLabel.UPPER_LEFT: BoundingBox(0, 0, half_w, half_h),
        RegionLabel.UPPER_RIGHT: BoundingBox(width - half_w, 0, width, half_h),
        RegionLabel.BOTTOM_LEFT: BoundingBox(0, height - half_h, half_w, height),
        RegionLabel.BOTTOM_RIGHT: BoundingBox(width - half_w, height - half_h, width, height),
        RegionLabel.CENTER: BoundingBox(left, top, left + half_w, top + half_h),
    }


def assign_region(box: BoundingBox, width: int, height: int) -> RegionLabel:
    best_label, best_score = None, Fraction(-1)
    for label, region in region_boxes(width, height).items():
        inter, union = overlap(box, region)
        score = Fraction(inter, union) if union else Fraction(0)
        if score > best_score:
            best_label, best_score = label, score
    return best_label


def relative_direction(a: BoundingBox, b: BoundingBox) -> Direction:
    """Direction of ``a`` as seen from ``b`` in image coordinates (y grows downward)."""
    (ax, ay), (bx, by) = a.center, b.center
    dx, dy = ax - bx, ay - by
    if dx == 0 and dy == 0:
        raise CoincidentTargets('coincident targets')
    if abs(dy) >= abs(dx):
        return Direction.ABOVE if dy < 0 else Direction.BELOW
    return Direction.LEFT if dx < 0 else Direction.RIGHT
