"""Boxes, IoU, and class-wise non-maximum suppression."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = ["BBox", "Detection", "GroundTruth", "iou", "class_nms"]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in absolute pixel corner form (x1, y1, x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BBox.{name} must be finite, got {v}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"BBox corners out of order: {self}")

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def is_degenerate(self) -> bool:
        return self.area() == 0.0


@dataclass(frozen=True)
class Detection:
    """A scored, classified box on one image."""

    box: BBox
    score: float
    class_id: int
    image_id: int

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"Detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    """An annotated box on one image."""

    box: BBox
    class_id: int
    image_id: int


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 by convention when the union has no area."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def class_nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy per-class suppression for one image.

    Highest score wins; a same-class box is suppressed when its IoU with
    any kept box is >= ``iou_thresh``. Output is sorted by descending
    score, input order breaking ties.
    """
    if not (0.0 < iou_thresh <= 1.0):
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    if not dets:
        return []
    image_ids = {d.image_id for d in dets}
    if len(image_ids) != 1:
        raise ValueError(f"class_nms expects one image, got image_ids {sorted(image_ids)}")

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    suppressed = [False] * len(dets)
    kept: list[Detection] = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(dets[i])
        for j in order[pos + 1:]:
            if suppressed[j] or dets[j].class_id != dets[i].class_id:
                continue
            if iou(dets[i].box, dets[j].box) >= iou_thresh:
                suppressed[j] = True
    return kept
