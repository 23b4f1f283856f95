"""Straight-line reference implementations used as test oracles.

Everything here is deliberately naive: plain loops, stdlib statistics,
full sorts. Only the data containers are shared with the library; every
computation is re-derived so the two routes stay independent.
"""

from __future__ import annotations

import statistics

from msfk.geometry import BBox, Detection, GroundTruth


def bf_iou(a: BBox, b: BBox) -> float:
    left = max(a.x1, b.x1)
    top = max(a.y1, b.y1)
    right = min(a.x2, b.x2)
    bottom = min(a.y2, b.y2)
    iw = right - left
    ih = bottom - top
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return inter / union


def bf_class_nms(dets: list[Detection], thresh: float) -> list[Detection]:
    """Keep a detection unless a kept same-class detection overlaps it."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[int] = []
    for i in order:
        ok = True
        for j in kept:
            if dets[j].class_id != dets[i].class_id:
                continue
            if bf_iou(dets[j].box, dets[i].box) >= thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return [dets[i] for i in kept]


def bf_adaptive_threshold(scores: list[float], floor: float, sample_std: bool = False) -> float:
    if not scores:
        return floor
    mu = statistics.mean(scores)
    if sample_std:
        sigma = statistics.stdev(scores) if len(scores) > 1 else 0.0
    else:
        sigma = statistics.pstdev(scores)
    return max(mu + sigma, floor)


def bf_pseudo_labels(
    dets: list[Detection],
    gts: list[GroundTruth],
    tau_floor: float = 0.35,
    delta: float = 0.3,
    nms_iou: float = 0.5,
    sample_std: bool = False,
) -> list[Detection]:
    if not dets:
        return []
    tau = bf_adaptive_threshold([d.score for d in dets], tau_floor, sample_std)
    kept = []
    for d in dets:
        area = (d.box.x2 - d.box.x1) * (d.box.y2 - d.box.y1)
        if d.score >= tau and area > 0:
            kept.append(d)
    survivors = bf_class_nms(kept, nms_iou)
    accepted = []
    for d in survivors:
        collide = False
        for g in gts:
            if g.class_id == d.class_id and bf_iou(d.box, g.box) >= delta:
                collide = True
                break
        if not collide:
            accepted.append(d)
    return accepted


def bf_match(dets: list[Detection], gts: list[GroundTruth], thresh: float) -> list[tuple[Detection, bool]]:
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    out = []
    for i in order:
        best = 0.0
        pick = -1
        for j in range(len(gts)):
            if taken[j]:
                continue
            v = bf_iou(dets[i].box, gts[j].box)
            if v > best:
                best = v
                pick = j
        if pick >= 0 and best >= thresh:
            taken[pick] = True
            out.append((dets[i], True))
        else:
            out.append((dets[i], False))
    return out


def bf_average_precision(labels: list[bool], num_gt: int, recall_points: int = 101):
    if num_gt == 0:
        return 0.0 if labels else None
    tp = 0
    fp = 0
    curve = []
    for flag in labels:
        if flag:
            tp += 1
        else:
            fp += 1
        curve.append((tp / num_gt, tp / (tp + fp)))
    total = 0.0
    for i in range(recall_points):
        r = i / (recall_points - 1)
        best = 0.0
        for recall, precision in curve:
            if recall >= r and precision > best:
                best = precision
        total += best
    return total / recall_points


def bf_evaluate(
    images: list[int],
    class_ids: list[int],
    dets: list[Detection],
    gts: list[GroundTruth],
    thresholds: list[float],
    recall_points: int = 101,
    max_dets: int = 100,
) -> dict[int, dict[float, float]]:
    """Per-class AP at every threshold; classes without ground truth are omitted."""
    result: dict[int, dict[float, float]] = {}
    for cls in sorted(class_ids):
        num_gt = sum(1 for g in gts if g.class_id == cls)
        if num_gt == 0:
            continue
        result[cls] = {}
        for t in thresholds:
            labeled: list[tuple[Detection, bool]] = []
            for image in sorted(images):
                image_dets = [d for d in dets if d.image_id == image and d.class_id == cls]
                order = sorted(range(len(image_dets)),
                               key=lambda i: (-image_dets[i].score, i))[:max_dets]
                image_dets = [image_dets[i] for i in order]
                image_gts = [g for g in gts if g.image_id == image and g.class_id == cls]
                labeled.extend(bf_match(image_dets, image_gts, t))
            labeled.sort(key=lambda pair: -pair[0].score)
            ap = bf_average_precision([flag for _, flag in labeled], num_gt, recall_points)
            result[cls][t] = 0.0 if ap is None else ap
    return result


def bf_top_k(row_scores: list[float], k: int) -> list[int]:
    """Indices of the k largest scores, lower index winning ties."""
    order = sorted(range(len(row_scores)), key=lambda i: (-row_scores[i], i))
    return order[:k]
