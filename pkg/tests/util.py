"""Shared builders for randomized test instances."""

from __future__ import annotations

import numpy as np

from msfk.datasets import Annotation, Category, Dataset, ImageRecord
from msfk.geometry import BBox, Detection, GroundTruth


def random_box(rng: np.random.Generator, width: float = 100.0, height: float = 100.0,
               max_side: float = 40.0) -> BBox:
    x1 = rng.uniform(0, width - 1)
    y1 = rng.uniform(0, height - 1)
    w = rng.uniform(1, max_side)
    h = rng.uniform(1, max_side)
    return BBox(x1, y1, min(x1 + w, width), min(y1 + h, height))


def random_detections(rng: np.random.Generator, n: int, image_id: int = 1,
                      num_classes: int = 3) -> list[Detection]:
    return [
        Detection(
            box=random_box(rng),
            score=float(rng.uniform(0, 1)),
            class_id=int(rng.integers(1, num_classes + 1)),
            image_id=image_id,
        )
        for _ in range(n)
    ]


def random_ground_truths(rng: np.random.Generator, n: int, image_id: int = 1,
                         num_classes: int = 3) -> list[GroundTruth]:
    return [
        GroundTruth(
            box=random_box(rng),
            class_id=int(rng.integers(1, num_classes + 1)),
            image_id=image_id,
        )
        for _ in range(n)
    ]


def make_dataset(
    rng: np.random.Generator,
    num_images: int = 4,
    num_classes: int = 3,
    anns_per_image: tuple[int, int] = (0, 4),
    size: tuple[int, int] = (100, 100),
) -> Dataset:
    width, height = size
    images = tuple(
        ImageRecord(
            image_id=i + 1,
            file_name=f"img_{i + 1:04d}.jpg",
            width=width,
            height=height,
            file_name_ir=f"img_{i + 1:04d}_ir.png",
        )
        for i in range(num_images)
    )
    categories = tuple(Category(class_id=c + 1, name=f"class_{c + 1}") for c in range(num_classes))
    annotations = []
    ann_id = 1
    for im in images:
        for _ in range(int(rng.integers(anns_per_image[0], anns_per_image[1] + 1))):
            box = random_box(rng, width, height)
            annotations.append(Annotation(
                ann_id=ann_id,
                image_id=im.image_id,
                class_id=int(rng.integers(1, num_classes + 1)),
                bbox=(round(box.x1, 6), round(box.y1, 6),
                      round(box.x2 - box.x1, 6), round(box.y2 - box.y1, 6)),
            ))
            ann_id += 1
    return Dataset(images, tuple(annotations), categories)
