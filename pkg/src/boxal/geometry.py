"""Axis-aligned bounding-box primitives: IoU, mean box, non-maximum suppression.

Boxes use the corner convention (x_min, y_min, x_max, y_max) with continuous
coordinates, so areas are exact products and no pixel rasterization is involved.
All operations are pure; tie-breaks fall back to the lexicographic order of the
corner tuple so results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError


@dataclass(frozen=True, order=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(isinstance(c, (int, float)) and math.isfinite(c) for c in coords):
            raise ValidationError(f"box coordinates must be finite numbers, got {coords}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError(
                f"box must have strictly positive area (x_max > x_min, y_max > y_min), got {coords}"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def mean_box(boxes: Sequence[BoundingBox]) -> BoundingBox:
    """Coordinate-wise arithmetic mean of a nonempty sequence of boxes."""
    if not boxes:
        raise ValidationError("mean_box requires at least one box")
    k = len(boxes)
    return BoundingBox(
        sum(b.x_min for b in boxes) / k,
        sum(b.y_min for b in boxes) / k,
        sum(b.x_max for b in boxes) / k,
        sum(b.y_max for b in boxes) / k,
    )


def nms(
    detections: Sequence[tuple[BoundingBox, float]],
    iou_threshold: float,
) -> list[tuple[BoundingBox, float]]:
    """Greedy non-maximum suppression.

    Detections are visited in descending score order (score ties broken by the
    lexicographic order of the box corners); a detection is kept iff its IoU
    with every already-kept detection is below ``iou_threshold``. The output
    preserves that visiting order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValidationError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    for _, score in detections:
        if not math.isfinite(score):
            raise ValidationError(f"detection score must be finite, got {score}")
    ordered = sorted(detections, key=lambda d: (-d[1], d[0].as_tuple()))
    kept: list[tuple[BoundingBox, float]] = []
    for box, score in ordered:
        if all(iou(box, kb) < iou_threshold for kb, _ in kept):
            kept.append((box, score))
    return kept
