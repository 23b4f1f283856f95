"""COCO-style dataset model with few-shot sampling and pseudo-label merging.

The on-disk format is standard COCO JSON (images/annotations/categories)
with two extension fields: ``file_name_ir`` on an image record pairs the
thermal frame with the visible one, and ``is_pseudo`` on an annotation
marks merged pseudo-labels (absent reads as false).

Boxes are stored as (x, y, w, h) in absolute pixels. At load time every
box is clamped to its image bounds and rounded to 6 decimals, which makes
save/load round trips exact on the object model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox, Detection, GroundTruth
from . import jsonio

__all__ = [
    "IntegrityError",
    "ParseError",
    "DatasetWarning",
    "ImageRecord",
    "Annotation",
    "Category",
    "Dataset",
    "FewShotSplit",
    "load_coco",
    "save_coco",
    "dataset_from_dict",
    "sample_few_shot",
    "subset_by_images",
    "merge_pseudo_labels",
    "ground_truths",
    "save_split",
    "load_split",
    "load_detections",
    "save_detections",
]


class IntegrityError(ValueError):
    """A dataset record violates referential integrity or uniqueness."""


class ParseError(ValueError):
    """Input is not valid JSON; carries the character offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class DatasetWarning(UserWarning):
    """Non-fatal load events: clamped boxes, dropped crowd regions."""


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_name: str
    width: int
    height: int
    file_name_ir: str | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise IntegrityError(f"image {self.image_id}: non-positive size "
                                 f"{self.width}x{self.height}")


@dataclass(frozen=True)
class Annotation:
    ann_id: int
    image_id: int
    class_id: int
    bbox: tuple[float, float, float, float]  # x, y, w, h
    is_pseudo: bool = False

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w < 0 or h < 0:
            raise IntegrityError(f"annotation {self.ann_id}: negative box size {self.bbox}")


@dataclass(frozen=True)
class Category:
    class_id: int
    name: str


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...]
    annotations: tuple[Annotation, ...]
    categories: tuple[Category, ...]

    def __post_init__(self):
        image_ids = [im.image_id for im in self.images]
        if len(set(image_ids)) != len(image_ids):
            raise IntegrityError("duplicate image ids")
        class_ids = [c.class_id for c in self.categories]
        if len(set(class_ids)) != len(class_ids):
            raise IntegrityError("duplicate category ids")
        ann_ids = [a.ann_id for a in self.annotations]
        if len(set(ann_ids)) != len(ann_ids):
            raise IntegrityError("duplicate annotation ids")
        images = set(image_ids)
        classes = set(class_ids)
        for a in self.annotations:
            if a.image_id not in images:
                raise IntegrityError(f"annotation {a.ann_id}: unknown image_id {a.image_id}")
            if a.class_id not in classes:
                raise IntegrityError(f"annotation {a.ann_id}: unknown category_id {a.class_id}")

    def image_by_id(self) -> dict[int, ImageRecord]:
        return {im.image_id: im for im in self.images}

    def category_by_id(self) -> dict[int, Category]:
        return {c.class_id: c for c in self.categories}

    def annotations_by_image(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = {im.image_id: [] for im in self.images}
        for ann in self.annotations:
            out[ann.image_id].append(ann)
        return out

    def instance_counts(self) -> dict[int, int]:
        counts = {c.class_id: 0 for c in self.categories}
        for ann in self.annotations:
            counts[ann.class_id] += 1
        return counts


@dataclass(frozen=True)
class FewShotSplit:
    """A deterministic support set: image ids plus per-class instance counts.

    Classes whose count stayed below k (the dataset ran out of instances)
    are listed in ``flagged_class_ids``.
    """

    k: int
    seed: int
    image_ids: tuple[int, ...]
    per_class_counts: dict[int, int] = field(default_factory=dict)
    flagged_class_ids: tuple[int, ...] = ()


def _clamp_xywh(bbox: Sequence[float], width: int, height: int) -> tuple[float, float, float, float]:
    x, y, w, h = (float(v) for v in bbox)
    x1 = min(max(x, 0.0), float(width))
    y1 = min(max(y, 0.0), float(height))
    x2 = min(max(x + w, 0.0), float(width))
    y2 = min(max(y + h, 0.0), float(height))
    return (round(x1, 6), round(y1, 6), round(x2 - x1, 6), round(y2 - y1, 6))


def dataset_from_dict(obj: Mapping) -> Dataset:
    """Validate a parsed COCO object and build a Dataset.

    Enforces unique ids, resolvable references, non-negative box sizes,
    and in-bounds boxes (clamping with a warning). Crowd-region
    annotations (truthy ``iscrowd``) are dropped with a warning.
    """
    for key in ("images", "annotations", "categories"):
        if key not in obj or not isinstance(obj[key], list):
            raise IntegrityError(f"missing or invalid top-level array {key!r}")

    images: list[ImageRecord] = []
    seen_images: set[int] = set()
    for rec in obj["images"]:
        try:
            image_id = int(rec["id"])
            image = ImageRecord(
                image_id=image_id,
                file_name=str(rec["file_name"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
                file_name_ir=str(rec["file_name_ir"]) if rec.get("file_name_ir") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"invalid image record {rec!r}: {exc}") from exc
        if image.image_id in seen_images:
            raise IntegrityError(f"duplicate image id {image.image_id}")
        seen_images.add(image.image_id)
        images.append(image)

    categories: list[Category] = []
    seen_categories: set[int] = set()
    for rec in obj["categories"]:
        try:
            cat = Category(class_id=int(rec["id"]), name=str(rec["name"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"invalid category record {rec!r}: {exc}") from exc
        if cat.class_id in seen_categories:
            raise IntegrityError(f"duplicate category id {cat.class_id}")
        seen_categories.add(cat.class_id)
        categories.append(cat)

    image_by_id = {im.image_id: im for im in images}
    annotations: list[Annotation] = []
    seen_anns: set[int] = set()
    for rec in obj["annotations"]:
        try:
            ann_id = int(rec["id"])
            image_id = int(rec["image_id"])
            class_id = int(rec["category_id"])
            bbox = tuple(float(v) for v in rec["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"invalid annotation record {rec!r}: {exc}") from exc
        if len(bbox) != 4:
            raise IntegrityError(f"annotation {ann_id}: bbox must have 4 values, got {len(bbox)}")
        if ann_id in seen_anns:
            raise IntegrityError(f"duplicate annotation id {ann_id}")
        seen_anns.add(ann_id)
        if rec.get("iscrowd"):
            warnings.warn(f"annotation {ann_id}: crowd region dropped", DatasetWarning)
            continue
        if image_id not in image_by_id:
            raise IntegrityError(f"annotation {ann_id}: unknown image_id {image_id}")
        if class_id not in seen_categories:
            raise IntegrityError(f"annotation {ann_id}: unknown category_id {class_id}")
        if bbox[2] < 0 or bbox[3] < 0:
            raise IntegrityError(f"annotation {ann_id}: negative box size {bbox}")
        image = image_by_id[image_id]
        clamped = _clamp_xywh(bbox, image.width, image.height)
        if any(abs(a - b) > 1e-9 for a, b in zip(clamped, tuple(round(v, 6) for v in bbox))):
            warnings.warn(
                f"annotation {ann_id}: box {bbox} clamped to image bounds -> {clamped}",
                DatasetWarning,
            )
        annotations.append(Annotation(
            ann_id=ann_id,
            image_id=image_id,
            class_id=class_id,
            bbox=clamped,
            is_pseudo=bool(rec.get("is_pseudo", False)),
        ))

    return Dataset(tuple(images), tuple(annotations), tuple(categories))


def load_coco(path: str | Path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at offset {exc.pos}: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(obj, dict):
        raise IntegrityError("top-level JSON value must be an object")
    return dataset_from_dict(obj)


def _dataset_to_dict(ds: Dataset) -> dict:
    images = []
    for im in ds.images:
        rec = {"id": im.image_id, "file_name": im.file_name,
               "width": im.width, "height": im.height}
        if im.file_name_ir is not None:
            rec["file_name_ir"] = im.file_name_ir
        images.append(rec)
    annotations = []
    for ann in ds.annotations:
        rec = {"id": ann.ann_id, "image_id": ann.image_id,
               "category_id": ann.class_id, "bbox": list(ann.bbox)}
        if ann.is_pseudo:
            rec["is_pseudo"] = True
        annotations.append(rec)
    categories = [{"id": c.class_id, "name": c.name} for c in ds.categories]
    return {"images": images, "annotations": annotations, "categories": categories}


def save_coco(ds: Dataset, path: str | Path) -> None:
    jsonio.dump_json(_dataset_to_dict(ds), path)


def sample_few_shot(ds: Dataset, k: int, seed: int) -> FewShotSplit:
    """Greedy deterministic support-set sampling, counted in instances.

    Images are visited in a seed-shuffled order; an image is taken when it
    holds at least one instance of a class still below k. Selecting an
    image contributes all of its instances, so classes may overshoot k.
    Classes the dataset cannot fill to k end up flagged with whatever was
    available.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    ordered = sorted(ds.images, key=lambda im: im.image_id)
    order = rng.permutation(len(ordered))
    by_image = ds.annotations_by_image()
    counts = {c.class_id: 0 for c in ds.categories}

    selected: list[int] = []
    for idx in order:
        image = ordered[int(idx)]
        anns = by_image[image.image_id]
        if any(counts[a.class_id] < k for a in anns):
            selected.append(image.image_id)
            for a in anns:
                counts[a.class_id] += 1
        if all(v >= k for v in counts.values()):
            break

    flagged = tuple(sorted(c for c, v in counts.items() if v < k))
    return FewShotSplit(
        k=k,
        seed=seed,
        image_ids=tuple(selected),
        per_class_counts=counts,
        flagged_class_ids=flagged,
    )


def subset_by_images(ds: Dataset, image_ids: Iterable[int]) -> Dataset:
    """Filter to the given images (dataset order), keeping all categories."""
    wanted = set(image_ids)
    known = {im.image_id for im in ds.images}
    missing = wanted - known
    if missing:
        raise IntegrityError(f"unknown image ids in subset: {sorted(missing)}")
    images = tuple(im for im in ds.images if im.image_id in wanted)
    annotations = tuple(a for a in ds.annotations if a.image_id in wanted)
    return Dataset(images, annotations, ds.categories)


def merge_pseudo_labels(ds: Dataset, pseudo: Sequence[Detection]) -> Dataset:
    """Append detections as pseudo annotations with fresh ids.

    Existing annotations are untouched; each new record carries
    ``is_pseudo=True`` and a box clamped to its image, so the merged
    dataset still satisfies every load-time invariant.
    """
    image_by_id = ds.image_by_id()
    known_classes = {c.class_id for c in ds.categories}
    next_id = max((a.ann_id for a in ds.annotations), default=0) + 1
    new_annotations = list(ds.annotations)
    for det in pseudo:
        if det.image_id not in image_by_id:
            raise IntegrityError(f"pseudo detection references unknown image_id {det.image_id}")
        if det.class_id not in known_classes:
            raise IntegrityError(f"pseudo detection references unknown category_id {det.class_id}")
        image = image_by_id[det.image_id]
        b = det.box
        bbox = _clamp_xywh((b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1), image.width, image.height)
        new_annotations.append(Annotation(
            ann_id=next_id,
            image_id=det.image_id,
            class_id=det.class_id,
            bbox=bbox,
            is_pseudo=True,
        ))
        next_id += 1
    return replace(ds, annotations=tuple(new_annotations))


def ground_truths(ds: Dataset, image_id: int | None = None) -> list[GroundTruth]:
    """Annotations as corner-form ground-truth boxes, optionally per image."""
    out = []
    for ann in ds.annotations:
        if image_id is not None and ann.image_id != image_id:
            continue
        x, y, w, h = ann.bbox
        out.append(GroundTruth(
            box=BBox(x, y, x + w, y + h),
            class_id=ann.class_id,
            image_id=ann.image_id,
        ))
    return out


def save_split(split: FewShotSplit, path: str | Path) -> None:
    jsonio.dump_json({
        "k": split.k,
        "seed": split.seed,
        "image_ids": list(split.image_ids),
        "per_class_counts": {str(c): n for c, n in sorted(split.per_class_counts.items())},
        "flagged_class_ids": list(split.flagged_class_ids),
    }, path)


def load_split(path: str | Path) -> FewShotSplit:
    """Read a split manifest; externally produced support sets drop in here."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at offset {exc.pos}: {exc.msg}", offset=exc.pos) from exc
    try:
        return FewShotSplit(
            k=int(obj["k"]),
            seed=int(obj.get("seed", 0)),
            image_ids=tuple(int(i) for i in obj["image_ids"]),
            per_class_counts={int(c): int(n) for c, n in obj.get("per_class_counts", {}).items()},
            flagged_class_ids=tuple(int(c) for c in obj.get("flagged_class_ids", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"invalid split manifest: {exc}") from exc


def load_detections(path: str | Path) -> list[Detection]:
    """Read the COCO-results interchange file.

    A JSON array of {image_id, category_id, bbox: [x, y, w, h], score};
    boxes convert to corner form, scores must lie in [0, 1].
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at offset {exc.pos}: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(obj, list):
        raise IntegrityError("detection results must be a JSON array")
    out: list[Detection] = []
    for i, rec in enumerate(obj):
        try:
            x, y, w, h = (float(v) for v in rec["bbox"])
            det = Detection(
                box=BBox(x, y, x + w, y + h),
                score=float(rec["score"]),
                class_id=int(rec["category_id"]),
                image_id=int(rec["image_id"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"invalid detection record [{i}]: {exc}") from exc
        out.append(det)
    return out


def save_detections(dets: Sequence[Detection], path: str | Path) -> None:
    records = []
    for d in dets:
        records.append({
            "image_id": d.image_id,
            "category_id": d.class_id,
            "bbox": [d.box.x1, d.box.y1, d.box.x2 - d.box.x1, d.box.y2 - d.box.y1],
            "score": d.score,
        })
    jsonio.dump_json(records, path)
