"""Detection results model, box geometry, and pluggable detectors.

Boxes are normalized [x, y, w, h] fractions of image width/height with a
top-left origin, so geometry is independent of image resolution.
Confidences are stored to 4 decimal places and box coordinates to 6, which
keeps serialized files compact at million-image scale and makes
parse/serialize round trips exact.

A detections document is:

    {
      "info": {...},
      "detection_categories": {"1": "animal", ...},
      "images": [{"file", "max_detection_conf",
                  "detections": [{"category", "conf", "bbox"}, ...]}, ...]
    }

Canonical form sorts images by file name. Detectors implement
``detect(image) -> detections`` and must be deterministic for a fixed
configuration; that determinism is what makes batch resume and merge
reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Protocol, Sequence, runtime_checkable

from .canonical import canonical_dumps
from .coco_ct import Dataset, ImageRecord
from .errors import PipelineError

_EPS = 1e-9

DEFAULT_CATEGORIES: Mapping[int, str] = {1: "animal"}
ANIMAL_CATEGORY = 1


class DetectionsError(PipelineError):
    """Invalid detection values or malformed detections documents."""


@dataclass(frozen=True, slots=True)
class BBox:
    """Normalized box; coordinates are rounded to 6 decimals on creation.

    Extent overflowing the unit square is clamped to the edge (detectors
    routinely emit boxes poking past the image border); origins outside
    the square and negative sizes are rejected.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise DetectionsError(f"bbox {name} must be a number, got {value!r}")
        if self.w < -_EPS or self.h < -_EPS:
            raise DetectionsError(f"bbox has negative size: w={self.w}, h={self.h}")
        if not -_EPS <= self.x <= 1 + _EPS or not -_EPS <= self.y <= 1 + _EPS:
            raise DetectionsError(f"bbox origin outside unit square: x={self.x}, y={self.y}")
        x = min(max(round(float(self.x), 6), 0.0), 1.0)
        y = min(max(round(float(self.y), 6), 0.0), 1.0)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", round(min(float(self.w), 1.0 - x), 6))
        object.__setattr__(self, "h", round(min(float(self.h), 1.0 - y), 6))

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_json(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0.0 when the union has no area."""
    if a == b:
        return 1.0 if a.area > 0 else 0.0
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True, slots=True)
class Detection:
    """One detected animal: category code, confidence, box."""

    category: int
    conf: float
    bbox: BBox

    def __post_init__(self) -> None:
        if not isinstance(self.category, int) or isinstance(self.category, bool):
            raise DetectionsError(f"detection category must be an integer, got {self.category!r}")
        if not isinstance(self.conf, (int, float)) or isinstance(self.conf, bool):
            raise DetectionsError(f"detection conf must be a number, got {self.conf!r}")
        if not -_EPS <= self.conf <= 1 + _EPS:
            raise DetectionsError(f"detection conf {self.conf} outside [0, 1]")
        object.__setattr__(self, "conf", min(max(round(float(self.conf), 4), 0.0), 1.0))

    def to_json(self) -> dict[str, Any]:
        return {"category": str(self.category), "conf": self.conf, "bbox": self.bbox.to_json()}


@dataclass(frozen=True, slots=True)
class ImageDetections:
    """All detections for one image; max_detection_conf is always derived."""

    file: str
    detections: tuple[Detection, ...]
    max_detection_conf: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))
        object.__setattr__(self, "max_detection_conf",
                           max((d.conf for d in self.detections), default=0.0))

    def to_json(self) -> dict[str, Any]:
        return {
            "file": self.file,
            "max_detection_conf": self.max_detection_conf,
            "detections": [d.to_json() for d in self.detections],
        }


@dataclass(frozen=True)
class DetectionsFile:
    """A persisted batch of per-image results, canonicalized on creation."""

    info: Mapping[str, Any] = field(default_factory=dict)
    detection_categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))
    images: tuple[ImageDetections, ...] = ()

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.images, key=lambda im: im.file))
        object.__setattr__(self, "images", ordered)
        seen: set[str] = set()
        for im in ordered:
            if im.file in seen:
                raise DetectionsError(f"duplicate image file '{im.file}'")
            seen.add(im.file)
            for det in im.detections:
                if det.category not in self.detection_categories:
                    raise DetectionsError(
                        f"image '{im.file}': detection category {det.category} not in category map")

    @cached_property
    def by_file(self) -> Mapping[str, ImageDetections]:
        return {im.file: im for im in self.images}

    def to_json(self) -> dict[str, Any]:
        return {
            "info": dict(self.info),
            "detection_categories": {str(k): v for k, v in sorted(self.detection_categories.items())},
            "images": [im.to_json() for im in self.images],
        }


def serialize_detections(results: DetectionsFile) -> str:
    return canonical_dumps(results.to_json())


def parse_detections(text: str | bytes) -> DetectionsFile:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DetectionsError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DetectionsError("top level must be an object")
    for key in ("detection_categories", "images"):
        if key not in doc:
            raise DetectionsError(f"missing top-level key '{key}'")
    try:
        categories = {int(code): name for code, name in doc["detection_categories"].items()}
    except (TypeError, ValueError, AttributeError):
        raise DetectionsError("detection_categories must map integer codes to names") from None

    images = []
    for entry in doc["images"]:
        if not isinstance(entry, dict) or "file" not in entry:
            raise DetectionsError(f"malformed image entry: {entry!r}")
        detections = []
        for det in entry.get("detections", []):
            try:
                bbox = BBox(*det["bbox"])
                detections.append(Detection(category=int(det["category"]), conf=det["conf"], bbox=bbox))
            except (KeyError, TypeError, ValueError):
                raise DetectionsError(
                    f"image '{entry['file']}': malformed detection {det!r}") from None
        image = ImageDetections(file=entry["file"], detections=tuple(detections))
        stated = entry.get("max_detection_conf")
        if stated is not None and round(float(stated), 4) != image.max_detection_conf:
            raise DetectionsError(
                f"image '{entry['file']}': max_detection_conf {stated} does not match detections")
        images.append(image)

    return DetectionsFile(info=doc.get("info", {}), detection_categories=categories,
                          images=tuple(images))


def _unit_floats(*parts: Any) -> Iterable[float]:
    """Deterministic stream of floats in [0, 1) derived from the parts."""
    counter = 0
    while True:
        digest = hashlib.sha256(":".join(str(p) for p in (*parts, counter)).encode()).digest()
        for i in range(0, 32, 8):
            yield int.from_bytes(digest[i:i + 8], "big") / 2**64
        counter += 1


def stub_detect(image: ImageRecord, seed: int) -> tuple[Detection, ...]:
    """Deterministic pseudo-random detections; same (image, seed) in, same out.

    Emits 0 to 3 boxes. Empty outputs are kept rare (about 5%) so distinct
    images almost always produce distinct detection lists.
    """
    stream = _unit_floats("stub", seed, image.id)
    u = next(stream)
    count = 0 if u < 0.05 else 1 + min(int((u - 0.05) / 0.95 * 3), 2)
    detections = []
    for _ in range(count):
        x = next(stream) * 0.8
        y = next(stream) * 0.8
        w = 0.05 + next(stream) * min(0.15, 1.0 - x - 0.05)
        h = 0.05 + next(stream) * min(0.15, 1.0 - y - 0.05)
        conf = next(stream)
        detections.append(Detection(category=ANIMAL_CATEGORY, conf=conf, bbox=BBox(x, y, w, h)))
    return tuple(detections)


def oracle_detect(
    image: ImageRecord,
    truth: Dataset,
    flip_prob: float = 0.0,
    conf_spread: float = 0.0,
    seed: int = 0,
) -> tuple[Detection, ...]:
    """Ground-truth-driven detector with controllable, seeded noise.

    A non-empty-labeled image yields one detection with confidence in
    [1 - conf_spread, 1]; an empty-labeled image yields none. With
    probability ``flip_prob`` (deterministic per image) the behavior
    inverts: the animal is missed, or a false positive with confidence in
    [0, conf_spread] appears on the empty image.
    """
    if image.id not in truth.images_by_id:
        raise DetectionsError(f"image '{image.id}' not in dataset")
    if not 0.0 <= flip_prob <= 1.0 or not 0.0 <= conf_spread <= 1.0:
        raise DetectionsError("flip_prob and conf_spread must be in [0, 1]")
    stream = _unit_floats("oracle", seed, image.id)
    u_flip = next(stream)
    u_conf = next(stream)
    positive = not truth.is_empty_labeled(image.id)
    flipped = u_flip < flip_prob
    if positive == flipped:
        return ()
    conf = 1.0 - u_conf * conf_spread if positive else u_conf * conf_spread
    x = 0.1 + next(stream) * 0.4
    y = 0.1 + next(stream) * 0.4
    w = 0.2 + next(stream) * 0.3
    h = 0.2 + next(stream) * 0.3
    bbox = BBox(x, y, min(w, 1.0 - x), min(h, 1.0 - y))
    return (Detection(category=ANIMAL_CATEGORY, conf=conf, bbox=bbox),)


@runtime_checkable
class Detector(Protocol):
    """Per-image detector contract used by the orchestrator.

    Implementations must be deterministic for a fixed configuration and
    safe to call from multiple workers (the orchestrator may pickle them
    into worker processes). Nondeterministic external detectors must be
    wrapped in a caching adapter before orchestration.
    """

    name: str
    version: str
    categories: Mapping[int, str]

    def detect(self, image: ImageRecord) -> Sequence[Detection]: ...


@dataclass(frozen=True)
class StubDetector:
    """Built-in deterministic stand-in for a real detector."""

    seed: int
    name: str = "stub"
    version: str = "1.0"
    categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))

    def detect(self, image: ImageRecord) -> Sequence[Detection]:
        return stub_detect(image, self.seed)


@dataclass(frozen=True)
class OracleDetector:
    """Built-in detector that answers from ground-truth labels plus noise."""

    dataset: Dataset
    flip_prob: float = 0.0
    conf_spread: float = 0.0
    seed: int = 0
    name: str = "oracle"
    version: str = "1.0"
    categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))

    def detect(self, image: ImageRecord) -> Sequence[Detection]:
        return oracle_detect(image, self.dataset, self.flip_prob, self.conf_spread, self.seed)


def merge_results(parts: Sequence[DetectionsFile]) -> DetectionsFile:
    """Merge disjoint result parts into one canonical file.

    Order of parts does not matter; images end up sorted by file name.
    Duplicate file names or mismatched category maps are refused.
    """
    if not parts:
        raise DetectionsError("nothing to merge: no parts given")
    categories = dict(parts[0].detection_categories)
    for part in parts[1:]:
        if dict(part.detection_categories) != categories:
            raise DetectionsError("parts disagree on detection_categories")
    seen: dict[str, int] = {}
    images: list[ImageDetections] = []
    for index, part in enumerate(parts):
        for im in part.images:
            if im.file in seen:
                raise DetectionsError(f"duplicate image file '{im.file}' across parts")
            seen[im.file] = index
            images.append(im)
    info: dict[str, Any] = {k: v for k, v in parts[0].info.items()
                            if k in ("detector", "detector_version", "format_version")}
    info["merged_parts"] = len(parts)
    return DetectionsFile(info=info, detection_categories=categories, images=tuple(images))
