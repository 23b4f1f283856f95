"""Adaptive per-image pseudo-labeling.

For each image the acceptance pipeline runs in a fixed order: compute the
adaptive threshold over all candidate scores, keep candidates at or above
it, drop degenerate boxes, apply class-wise NMS, then accept survivors
whose maximum IoU with any same-class ground-truth box stays below the
overlap gate. Accepted labels complement the existing annotations rather
than duplicating them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datasets import Dataset, IntegrityError, ground_truths, merge_pseudo_labels
from .geometry import Detection, GroundTruth, class_nms, iou

__all__ = [
    "PseudoLabelConfig",
    "ScoreStats",
    "ImageLabelStats",
    "adaptive_threshold",
    "generate_pseudo_labels",
    "score_stats",
    "label_dataset",
]


@dataclass(frozen=True)
class PseudoLabelConfig:
    tau_floor: float = 0.35
    delta: float = 0.3
    nms_iou: float = 0.5
    top_n_stats: int = 50
    std_mode: str = "population"

    def __post_init__(self):
        if not (0.0 < self.tau_floor <= 1.0):
            raise ValueError(f"tau_floor must lie in (0, 1], got {self.tau_floor}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not (0.0 < self.nms_iou <= 1.0):
            raise ValueError(f"nms_iou must lie in (0, 1], got {self.nms_iou}")
        if self.top_n_stats < 1:
            raise ValueError(f"top_n_stats must be >= 1, got {self.top_n_stats}")
        if self.std_mode not in ("population", "sample"):
            raise ValueError(f"std_mode must be 'population' or 'sample', got {self.std_mode!r}")


@dataclass(frozen=True)
class ScoreStats:
    median: float
    p75: float
    count: int
    empty: bool = False


@dataclass(frozen=True)
class ImageLabelStats:
    image_id: int
    count: int
    median: float
    p75: float
    tau: float


def adaptive_threshold(scores: Sequence[float], cfg: PseudoLabelConfig) -> float:
    """max(mean + std, tau_floor) over an image's candidate scores.

    An empty score list collapses to the floor.
    """
    if len(scores) == 0:
        return cfg.tau_floor
    arr = np.asarray(scores, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("scores must lie in [0, 1]")
    mu = float(arr.mean())
    ddof = 0 if cfg.std_mode == "population" else 1
    sigma = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
    return max(mu + sigma, cfg.tau_floor)


def generate_pseudo_labels(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    cfg: PseudoLabelConfig,
) -> list[Detection]:
    """Run the per-image acceptance pipeline; all records share one image."""
    if not dets:
        return []
    image_ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(image_ids) != 1:
        raise ValueError(f"generate_pseudo_labels expects one image, got ids {sorted(image_ids)}")

    tau = adaptive_threshold([d.score for d in dets], cfg)
    kept = [d for d in dets if d.score >= tau and not d.box.is_degenerate]
    survivors = class_nms(kept, cfg.nms_iou)

    accepted = []
    for det in survivors:
        same_class = [g for g in gts if g.class_id == det.class_id]
        worst = max((iou(det.box, g.box) for g in same_class), default=0.0)
        if worst < cfg.delta:
            accepted.append(det)
    return accepted


def score_stats(dets: Sequence[Detection], cfg: PseudoLabelConfig) -> ScoreStats:
    """Median and 75th percentile of the top-scoring candidates.

    At most ``cfg.top_n_stats`` scores are used; percentiles interpolate
    linearly. Empty input reports zeros with the empty flag set.
    """
    if not dets:
        return ScoreStats(median=0.0, p75=0.0, count=0, empty=True)
    scores = sorted((d.score for d in dets), reverse=True)[: cfg.top_n_stats]
    arr = np.asarray(scores, dtype=np.float64)
    return ScoreStats(
        median=float(np.median(arr)),
        p75=float(np.percentile(arr, 75)),
        count=len(scores),
        empty=False,
    )


def _process_image(args) -> tuple[list[Detection], ImageLabelStats]:
    image_id, dets, gts, cfg = args
    stats = score_stats(dets, cfg)
    tau = adaptive_threshold([d.score for d in dets], cfg)
    accepted = generate_pseudo_labels(dets, gts, cfg)
    return accepted, ImageLabelStats(
        image_id=image_id,
        count=stats.count,
        median=stats.median,
        p75=stats.p75,
        tau=tau,
    )


def label_dataset(
    ds: Dataset,
    detections: Sequence[Detection],
    cfg: PseudoLabelConfig,
    workers: int = 1,
) -> tuple[Dataset, list[ImageLabelStats]]:
    """Pseudo-label every image and merge the accepted labels.

    Returns the merged dataset plus one stats row per image (ascending
    image id). Detections must reference known image and category ids.
    Images are independent, so ``workers`` > 1 fans them out over a
    thread pool without changing the output.
    """
    known_images = ds.image_by_id()
    known_classes = {c.class_id for c in ds.categories}
    by_image: dict[int, list[Detection]] = {im.image_id: [] for im in ds.images}
    for det in detections:
        if det.image_id not in known_images:
            raise IntegrityError(f"detection references unknown image_id {det.image_id}")
        if det.class_id not in known_classes:
            raise IntegrityError(f"detection references unknown category_id {det.class_id}")
        by_image[det.image_id].append(det)

    gts_by_image: dict[int, list[GroundTruth]] = {im.image_id: [] for im in ds.images}
    for gt in ground_truths(ds):
        gts_by_image[gt.image_id].append(gt)

    image_ids = sorted(by_image)
    jobs = [(i, by_image[i], gts_by_image[i], cfg) for i in image_ids]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_process_image, jobs))
    else:
        results = [_process_image(job) for job in jobs]

    accepted: list[Detection] = []
    stats_rows: list[ImageLabelStats] = []
    for dets, stats in results:
        accepted.extend(dets)
        stats_rows.append(stats)
    return merge_pseudo_labels(ds, accepted), stats_rows
