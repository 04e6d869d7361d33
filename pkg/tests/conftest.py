"""Shared fixture builders for the test suite."""

from __future__ import annotations

import random

import pytest

from wildpipe.coco_ct import AnnotationRecord, Category, Dataset, ImageRecord
from wildpipe.detection import BBox, Detection, DetectionsFile, ImageDetections


def make_dataset(
    n_images: int,
    n_locations: int = 3,
    species: tuple[str, ...] = ("deer", "elk"),
    labeled: dict[int, str] | None = None,
    empty_annotated: tuple[int, ...] = (),
    datetimes: bool = False,
    width: int = 800,
    height: int = 600,
) -> Dataset:
    """Deterministic dataset: image i sits at location L{i % n_locations}.

    ``labeled`` maps image index -> species name; ``empty_annotated`` lists
    indexes that get an explicit category-0 annotation.
    """
    categories = [Category(0, "empty")]
    categories += [Category(i + 1, name) for i, name in enumerate(sorted(species))]
    category_id = {c.name: c.id for c in categories}

    images = []
    annotations = []
    for i in range(n_images):
        location = f"L{i % n_locations}"
        kwargs = {}
        if datetimes:
            kwargs["datetime"] = f"2019-06-{1 + i % 28:02d} {i % 24:02d}:00:00"
        images.append(ImageRecord(
            id=f"img{i:06d}", file_name=f"{location}/img{i:06d}.jpg",
            width=width, height=height, location=location, **kwargs))
        if labeled and i in labeled:
            annotations.append(AnnotationRecord(
                id=f"ann{i:06d}", image_id=f"img{i:06d}", category_id=category_id[labeled[i]]))
        elif i in empty_annotated:
            annotations.append(AnnotationRecord(
                id=f"ann{i:06d}", image_id=f"img{i:06d}", category_id=0))

    return Dataset(info={"version": "1.0"}, images=tuple(images),
                   annotations=tuple(annotations), categories=tuple(categories))


def make_results(confs_by_file: dict[str, list[float]],
                 info: dict | None = None) -> DetectionsFile:
    """DetectionsFile with one centered box per given confidence."""
    images = []
    for file, confs in confs_by_file.items():
        detections = tuple(
            Detection(category=1, conf=c, bbox=BBox(0.2, 0.2, 0.3, 0.3)) for c in confs)
        images.append(ImageDetections(file=file, detections=detections))
    return DetectionsFile(info=info or {"detector": "fixture"}, images=tuple(images))


def random_bbox(rng: random.Random) -> BBox:
    x = rng.uniform(0, 0.9)
    y = rng.uniform(0, 0.9)
    w = rng.uniform(0.01, 1 - x)
    h = rng.uniform(0.01, 1 - y)
    return BBox(x, y, w, h)


@pytest.fixture
def small_dataset() -> Dataset:
    return make_dataset(12, n_locations=3, labeled={0: "deer", 1: "elk", 2: "deer", 3: "elk"},
                        empty_annotated=(4, 5))
