"""COCO-Camera-Traps dataset format: model, parser, serializer, converter.

The document is a JSON object with four top-level keys:

    {
      "info": {...},
      "images": [{"id", "file_name", "width", "height", "location",
                  optional "datetime", "seq_id", "frame_num"}, ...],
      "annotations": [{"id", "image_id", "category_id"}, ...],
      "categories": [{"id", "name"}, ...]
    }

Annotations are image-level species labels; category id 0 is reserved for
the name "empty". Unknown fields are preserved opaquely so foreign
documents survive a parse/serialize round trip. Canonical serialization
sorts images, annotations and categories by id and is byte-identical
regardless of input ordering.

Everything here is an immutable value type; parsing and serialization are
stateless and safe to call concurrently.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime as _datetime
from functools import cached_property
from typing import Any, Callable, Iterable, Mapping, Sequence

from .canonical import canonical_dumps
from .errors import PipelineError

logger = logging.getLogger(__name__)

EMPTY_CATEGORY_ID = 0
EMPTY_CATEGORY_NAME = "empty"

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".gif", ".bmp", ".tif", ".tiff"}

_IMAGE_KEYS = {"id", "file_name", "width", "height", "location", "datetime", "seq_id", "frame_num"}
_ANNOTATION_KEYS = {"id", "image_id", "category_id"}
_CATEGORY_KEYS = {"id", "name"}


class DatasetError(PipelineError):
    """Base class for dataset format violations."""


class StructuralError(DatasetError):
    """Malformed document: bad JSON, wrong types, missing or invalid fields."""


class ReferentialError(DatasetError):
    """An annotation references an image or category id that does not exist."""


class DuplicateIdError(DatasetError):
    """Two records of the same kind share an id."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    file_name: str
    width: int
    height: int
    location: str
    datetime: str | None = None
    seq_id: str | None = None
    frame_num: int | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise StructuralError(f"image id must be a non-empty string, got {self.id!r}")
        _require(self, "file_name", str)
        _require(self, "location", str)
        for dim in ("width", "height"):
            value = getattr(self, dim)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise StructuralError(f"image '{self.id}': {dim} must be a positive integer, got {value!r}")
        if self.datetime is not None:
            try:
                _datetime.fromisoformat(self.datetime)
            except (TypeError, ValueError):
                raise StructuralError(f"image '{self.id}': datetime {self.datetime!r} is not ISO-8601") from None
        if self.seq_id is not None and not isinstance(self.seq_id, str):
            raise StructuralError(f"image '{self.id}': seq_id must be a string")
        if self.frame_num is not None:
            if not isinstance(self.frame_num, int) or isinstance(self.frame_num, bool) or self.frame_num < 0:
                raise StructuralError(f"image '{self.id}': frame_num must be a non-negative integer")
            if self.seq_id is None:
                raise StructuralError(f"image '{self.id}': frame_num given without seq_id")

    def to_json(self) -> dict[str, Any]:
        out = dict(self.extra)
        out.update(id=self.id, file_name=self.file_name, width=self.width,
                   height=self.height, location=self.location)
        if self.datetime is not None:
            out["datetime"] = self.datetime
        if self.seq_id is not None:
            out["seq_id"] = self.seq_id
        if self.frame_num is not None:
            out["frame_num"] = self.frame_num
        return out


@dataclass(frozen=True)
class AnnotationRecord:
    id: str
    image_id: str
    category_id: int
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise StructuralError(f"annotation id must be a non-empty string, got {self.id!r}")
        if not isinstance(self.image_id, str):
            raise StructuralError(f"annotation '{self.id}': image_id must be a string")
        if not isinstance(self.category_id, int) or isinstance(self.category_id, bool):
            raise StructuralError(f"annotation '{self.id}': category_id must be an integer")

    def to_json(self) -> dict[str, Any]:
        out = dict(self.extra)
        out.update(id=self.id, image_id=self.image_id, category_id=self.category_id)
        return out


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 0:
            raise StructuralError(f"category id must be a non-negative integer, got {self.id!r}")
        if not isinstance(self.name, str) or not self.name:
            raise StructuralError(f"category {self.id}: name must be a non-empty string")
        if self.id == EMPTY_CATEGORY_ID and self.name != EMPTY_CATEGORY_NAME:
            raise StructuralError(
                f"category id {EMPTY_CATEGORY_ID} is reserved for '{EMPTY_CATEGORY_NAME}', got {self.name!r}")

    def to_json(self) -> dict[str, Any]:
        out = dict(self.extra)
        out.update(id=self.id, name=self.name)
        return out


def _require(record: Any, name: str, kind: type) -> None:
    value = getattr(record, name)
    if not isinstance(value, kind):
        raise StructuralError(f"image '{record.id}': {name} must be {kind.__name__}, got {value!r}")


@dataclass(frozen=True)
class Dataset:
    """A validated COCO-CT dataset, normalized to canonical record order."""

    info: Mapping[str, Any] = field(default_factory=dict)
    images: tuple[ImageRecord, ...] = ()
    annotations: tuple[AnnotationRecord, ...] = ()
    categories: tuple[Category, ...] = ()
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(sorted(self.images, key=lambda r: r.id)))
        object.__setattr__(self, "annotations", tuple(sorted(self.annotations, key=lambda r: r.id)))
        object.__setattr__(self, "categories", tuple(sorted(self.categories, key=lambda r: r.id)))
        _check_unique((r.id for r in self.images), "image")
        _check_unique((r.id for r in self.annotations), "annotation")
        _check_unique((r.id for r in self.categories), "category")
        image_ids = {r.id for r in self.images}
        category_ids = {c.id for c in self.categories}
        for ann in self.annotations:
            if ann.image_id not in image_ids:
                raise ReferentialError(
                    f"annotation '{ann.id}' references missing image id '{ann.image_id}'")
            if ann.category_id not in category_ids:
                raise ReferentialError(
                    f"annotation '{ann.id}' references missing category id {ann.category_id}")

    @cached_property
    def images_by_id(self) -> Mapping[str, ImageRecord]:
        return {r.id: r for r in self.images}

    @cached_property
    def images_by_file(self) -> Mapping[str, ImageRecord]:
        return {r.file_name: r for r in self.images}

    @cached_property
    def annotations_by_image(self) -> Mapping[str, tuple[AnnotationRecord, ...]]:
        grouped: dict[str, list[AnnotationRecord]] = {}
        for ann in self.annotations:
            grouped.setdefault(ann.image_id, []).append(ann)
        return {k: tuple(v) for k, v in grouped.items()}

    @cached_property
    def category_names(self) -> Mapping[int, str]:
        return {c.id: c.name for c in self.categories}

    def is_empty_labeled(self, image_id: str) -> bool:
        """True when the image has no annotations or only 'empty' ones."""
        anns = self.annotations_by_image.get(image_id, ())
        return all(a.category_id == EMPTY_CATEGORY_ID for a in anns)

    def species_of(self, image_id: str) -> set[str]:
        """Distinct non-empty species names annotated on the image."""
        return {
            self.category_names[a.category_id]
            for a in self.annotations_by_image.get(image_id, ())
            if a.category_id != EMPTY_CATEGORY_ID
        }


def _check_unique(ids: Iterable[Any], kind: str) -> None:
    seen: set[Any] = set()
    for value in ids:
        if value in seen:
            raise DuplicateIdError(f"duplicate {kind} id {value!r}")
        seen.add(value)


def _split_known(entry: Mapping[str, Any], known: set[str], where: str) -> tuple[dict[str, Any], dict[str, Any]]:
    if not isinstance(entry, Mapping):
        raise StructuralError(f"{where} entry must be an object, got {type(entry).__name__}")
    fields = {k: v for k, v in entry.items() if k in known}
    extras = {k: v for k, v in entry.items() if k not in known}
    return fields, extras


def parse_dataset(text: str | bytes) -> Dataset:
    """Parse and fully validate a COCO-CT document."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise StructuralError("top level must be an object")
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise StructuralError(f"missing top-level key '{key}'")
        if not isinstance(doc[key], list):
            raise StructuralError(f"top-level '{key}' must be an array")
    info = doc.get("info", {})
    if not isinstance(info, Mapping):
        raise StructuralError("top-level 'info' must be an object")

    images = []
    for entry in doc["images"]:
        fields, extras = _split_known(entry, _IMAGE_KEYS, "image")
        for required in ("id", "file_name", "width", "height", "location"):
            if required not in fields:
                raise StructuralError(f"image entry {fields.get('id')!r} missing '{required}'")
        images.append(ImageRecord(extra=extras, **fields))

    annotations = []
    for entry in doc["annotations"]:
        fields, extras = _split_known(entry, _ANNOTATION_KEYS, "annotation")
        for required in _ANNOTATION_KEYS:
            if required not in fields:
                raise StructuralError(f"annotation entry {fields.get('id')!r} missing '{required}'")
        annotations.append(AnnotationRecord(extra=extras, **fields))

    categories = []
    for entry in doc["categories"]:
        fields, extras = _split_known(entry, _CATEGORY_KEYS, "category")
        for required in _CATEGORY_KEYS:
            if required not in fields:
                raise StructuralError(f"category entry {fields.get('id')!r} missing '{required}'")
        categories.append(Category(extra=extras, **fields))

    top_extra = {k: v for k, v in doc.items()
                 if k not in ("info", "images", "annotations", "categories")}
    return Dataset(info=dict(info), images=tuple(images), annotations=tuple(annotations),
                   categories=tuple(categories), extra=top_extra)


def serialize_dataset(dataset: Dataset) -> str:
    """Canonical text form; deterministic for structurally equal datasets."""
    doc: dict[str, Any] = dict(dataset.extra)
    doc["info"] = dict(dataset.info)
    doc["images"] = [r.to_json() for r in dataset.images]
    doc["annotations"] = [r.to_json() for r in dataset.annotations]
    doc["categories"] = [c.to_json() for c in dataset.categories]
    return canonical_dumps(doc)


def convert_foldered_labels(
    root_listing: Sequence[str],
    location_rule: int = 1,
    image_size: tuple[int, int] | Callable[[str], tuple[int, int]] = (1920, 1080),
    info: Mapping[str, Any] | None = None,
) -> Dataset:
    """Build a dataset from species-foldered relative paths.

    The first path segment names the species; the segment at index
    ``location_rule`` names the camera location ("unknown" when the path
    has no such directory segment). Files without an image extension are
    skipped with a warning. ``image_size`` supplies pixel dimensions,
    either as a constant or a per-path callable, since this converter
    never decodes pixels.
    """
    if not root_listing:
        raise StructuralError("empty folder listing: nothing to convert")
    if location_rule < 0:
        raise StructuralError("location_rule must be a non-negative segment index")

    size_of = image_size if callable(image_size) else (lambda _path: image_size)

    kept: list[str] = []
    skipped = 0
    for path in root_listing:
        segments = path.replace("\\", "/").split("/")
        if len(segments) < 2:
            raise StructuralError(f"path '{path}' has no species folder segment")
        suffix = "." + path.rsplit(".", 1)[-1].lower() if "." in path else ""
        if suffix not in IMAGE_EXTENSIONS:
            logger.warning("skipping non-image file: %s", path)
            skipped += 1
            continue
        kept.append(path.replace("\\", "/"))
    if skipped:
        logger.warning("skipped %d non-image file(s)", skipped)

    species_names = sorted({p.split("/")[0] for p in kept} - {EMPTY_CATEGORY_NAME})
    categories = [Category(id=EMPTY_CATEGORY_ID, name=EMPTY_CATEGORY_NAME)]
    categories += [Category(id=i + 1, name=name) for i, name in enumerate(species_names)]
    category_id_of = {c.name: c.id for c in categories}

    images = []
    annotations = []
    for path in kept:
        segments = path.split("/")
        location = segments[location_rule] if location_rule < len(segments) - 1 else "unknown"
        width, height = size_of(path)
        images.append(ImageRecord(id=path, file_name=path, width=width, height=height,
                                  location=location))
        annotations.append(AnnotationRecord(id=f"{path}#0", image_id=path,
                                            category_id=category_id_of[segments[0]]))

    return Dataset(info=dict(info) if info else {"version": "1.0"},
                   images=tuple(images), annotations=tuple(annotations),
                   categories=tuple(categories))
