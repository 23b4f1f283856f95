"""COCO-style detection evaluation: per-class AP, mAP, mAP50, mAP75.

Matching is greedy per image and class: detections in descending score
order claim the unmatched ground-truth box with the highest IoU when that
IoU reaches the threshold. Average precision interpolates precision at
evenly spaced recall points (101 by default). The headline "All" number
is mAP50 averaged over classes, and classes without any ground truth in
the dataset are excluded from every average.

AP arithmetic runs in plain Python (sums and divisions in a fixed order)
so results are reproducible to the last bit against a straight-line
reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .datasets import Dataset, IntegrityError
from .geometry import BBox, Detection, GroundTruth, iou
from . import jsonio

__all__ = [
    "EvalConfig",
    "ClassEval",
    "EvalReport",
    "match_detections",
    "average_precision",
    "evaluate",
]

_DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = _DEFAULT_THRESHOLDS
    recall_points: int = 101
    max_dets_per_image: int = 100

    def __post_init__(self):
        if not self.iou_thresholds:
            raise ValueError("iou_thresholds must be non-empty")
        if any(not (0.0 < t <= 1.0) for t in self.iou_thresholds):
            raise ValueError(f"iou_thresholds must lie in (0, 1]: {self.iou_thresholds}")
        if any(a >= b for a, b in zip(self.iou_thresholds, self.iou_thresholds[1:])):
            raise ValueError(f"iou_thresholds must be strictly increasing: {self.iou_thresholds}")
        if self.recall_points < 2:
            raise ValueError(f"recall_points must be >= 2, got {self.recall_points}")
        if self.max_dets_per_image < 1:
            raise ValueError(f"max_dets_per_image must be >= 1, got {self.max_dets_per_image}")


@dataclass(frozen=True)
class ClassEval:
    class_id: int
    name: str
    num_gt: int
    ap_by_iou: dict[float, float] = field(default_factory=dict)

    @property
    def mean_ap(self) -> float:
        values = list(self.ap_by_iou.values())
        return sum(values) / len(values)

    def ap_at(self, threshold: float) -> float | None:
        return self.ap_by_iou.get(threshold)


@dataclass(frozen=True)
class EvalReport:
    classes: tuple[ClassEval, ...]
    excluded_class_ids: tuple[int, ...]
    config: EvalConfig

    @property
    def map(self) -> float:
        if not self.classes:
            return 0.0
        return sum(c.mean_ap for c in self.classes) / len(self.classes)

    def map_at(self, threshold: float) -> float | None:
        values = [c.ap_at(threshold) for c in self.classes]
        if not values or any(v is None for v in values):
            return None
        return sum(values) / len(values)

    @property
    def map50(self) -> float | None:
        return self.map_at(0.5)

    @property
    def map75(self) -> float | None:
        return self.map_at(0.75)

    def to_json_dict(self) -> dict:
        classes = []
        for c in self.classes:
            classes.append({
                "class_id": c.class_id,
                "name": c.name,
                "num_gt": c.num_gt,
                "ap_by_iou": {f"{t:.2f}": ap for t, ap in c.ap_by_iou.items()},
                "ap50": c.ap_at(0.5),
                "ap75": c.ap_at(0.75),
                "mean_ap": c.mean_ap,
            })
        return {
            "classes": classes,
            "excluded_class_ids": list(self.excluded_class_ids),
            "map": self.map,
            "map50": self.map50,
            "map75": self.map75,
            "all": self.map50,
            "config": {
                "iou_thresholds": list(self.config.iou_thresholds),
                "recall_points": self.config.recall_points,
                "max_dets_per_image": self.config.max_dets_per_image,
            },
        }

    def format_table(self) -> str:
        """One row of per-class AP50 values plus the class-averaged All column."""
        names = [c.name for c in self.classes] + ["All"]
        ap50 = [c.ap_at(0.5) for c in self.classes] + [self.map50]
        cells = ["-" if v is None else jsonio.format_float(v) for v in ap50]
        widths = [max(len(n), len(v), 10) for n, v in zip(names, cells)]
        header = "  ".join(n.rjust(w) for n, w in zip(names, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(cells, widths))
        return header + "\n" + row + "\n"


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresh: float,
) -> list[tuple[Detection, bool]]:
    """Label one image's, one class's detections as TP/FP.

    Returns (detection, is_tp) pairs in descending score order, input
    order breaking score ties. Each ground truth matches at most once;
    equal-IoU candidates go to the lower ground-truth index.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    labeled: list[tuple[Detection, bool]] = []
    for i in order:
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            overlap = iou(dets[i].box, gt.box)
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0 and best_iou >= iou_thresh:
            taken[best_j] = True
            labeled.append((dets[i], True))
        else:
            labeled.append((dets[i], False))
    return labeled


def average_precision(
    labels: Sequence[bool],
    num_gt: int,
    recall_points: int = 101,
) -> float | None:
    """Interpolated AP over a score-ordered TP/FP sequence.

    Precision is interpolated as the maximum precision at any recall at
    or beyond each of ``recall_points`` evenly spaced recall levels.
    Returns None (class skipped) when there is nothing to score.
    """
    if num_gt < 0:
        raise ValueError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return 0.0 if labels else None
    tp = 0
    fp = 0
    points: list[tuple[float, float]] = []
    for is_tp in labels:
        if is_tp:
            tp += 1
        else:
            fp += 1
        points.append((tp / num_gt, tp / (tp + fp)))
    total = 0.0
    for i in range(recall_points):
        r = i / (recall_points - 1)
        best = 0.0
        for recall, precision in points:
            if recall >= r and precision > best:
                best = precision
        total += best
    return total / recall_points


def evaluate(ds: Dataset, dets: Sequence[Detection], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Score detections against a dataset's annotations.

    Detections are capped per image and class by score before matching;
    TP/FP labels aggregate over images (ascending image id) before AP.
    """
    known_images = ds.image_by_id()
    known_classes = {c.class_id for c in ds.categories}
    for det in dets:
        if det.image_id not in known_images:
            raise IntegrityError(f"detection references unknown image_id {det.image_id}")
        if det.class_id not in known_classes:
            raise IntegrityError(f"detection references unknown category_id {det.class_id}")

    image_ids = sorted(known_images)
    gts_by_key: dict[tuple[int, int], list[GroundTruth]] = {}
    num_gt: dict[int, int] = {c.class_id: 0 for c in ds.categories}
    for ann in ds.annotations:
        x, y, w, h = ann.bbox
        gt = GroundTruth(
            box=BBox(x, y, x + w, y + h),
            class_id=ann.class_id,
            image_id=ann.image_id,
        )
        gts_by_key.setdefault((ann.image_id, ann.class_id), []).append(gt)
        num_gt[ann.class_id] += 1

    dets_by_key: dict[tuple[int, int], list[Detection]] = {}
    for det in dets:
        dets_by_key.setdefault((det.image_id, det.class_id), []).append(det)

    classes: list[ClassEval] = []
    excluded: list[int] = []
    for cat in sorted(ds.categories, key=lambda c: c.class_id):
        if num_gt[cat.class_id] == 0:
            excluded.append(cat.class_id)
            continue
        ap_by_iou: dict[float, float] = {}
        for threshold in cfg.iou_thresholds:
            labels: list[bool] = []
            for image_id in image_ids:
                image_dets = dets_by_key.get((image_id, cat.class_id), [])
                capped = sorted(
                    range(len(image_dets)),
                    key=lambda i: (-image_dets[i].score, i),
                )[: cfg.max_dets_per_image]
                image_dets = [image_dets[i] for i in capped]
                image_gts = gts_by_key.get((image_id, cat.class_id), [])
                labels.extend(match_detections(image_dets, image_gts, threshold))
            # global score order; earlier images win ties (stable sort)
            labels.sort(key=lambda pair: -pair[0].score)
            ap = average_precision([tp for _, tp in labels], num_gt[cat.class_id],
                                   cfg.recall_points)
            ap_by_iou[threshold] = 0.0 if ap is None else ap
        classes.append(ClassEval(
            class_id=cat.class_id,
            name=cat.name,
            num_gt=num_gt[cat.class_id],
            ap_by_iou=ap_by_iou,
        ))
    return EvalReport(tuple(classes), tuple(excluded), cfg)
