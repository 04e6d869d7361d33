"""Crop rectangles and the classifier-training manifest.

Confident detections are paired with image-level species labels to yield
training entries of (file, crop rectangle, species). Labels cannot say
which box is which animal, so only images carrying exactly one non-empty
species label contribute entries; the rest are skipped and counted in the
manifest provenance. Rectangles are stored rather than pixels; actual
cropping is an IO adapter so the core never decodes images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .canonical import canonical_dumps
from .coco_ct import Dataset
from .detection import BBox, DetectionsFile
from .errors import PipelineError

DEFAULT_PADDING = 1.1
DEFAULT_SQUARE = True


class CropError(PipelineError):
    pass


@dataclass(frozen=True, slots=True)
class CropRect:
    """Pixel rectangle, always within its source image bounds."""

    left: int
    top: int
    width: int
    height: int

    def to_json(self) -> dict[str, int]:
        return {"left": self.left, "top": self.top, "width": self.width, "height": self.height}


def compute_crop_rect(
    bbox: BBox,
    image_w: int,
    image_h: int,
    padding_scale: float = DEFAULT_PADDING,
    square: bool = DEFAULT_SQUARE,
) -> CropRect:
    """Denormalize a box to pixels, pad it about its center, clip to bounds.

    With ``square`` the padded box is grown to a square of its larger side
    before clipping. The result is never degenerate.
    """
    if image_w < 1 or image_h < 1:
        raise CropError(f"image dimensions must be positive, got {image_w}x{image_h}")
    if padding_scale < 1.0:
        raise CropError(f"padding_scale must be >= 1, got {padding_scale}")
    if bbox.area == 0:
        raise CropError(f"zero-area bbox {bbox.to_json()} cannot be cropped")

    cx = (bbox.x + bbox.w / 2) * image_w
    cy = (bbox.y + bbox.h / 2) * image_h
    px_w = bbox.w * image_w * padding_scale
    px_h = bbox.h * image_h * padding_scale
    if square:
        px_w = px_h = max(px_w, px_h)

    left = max(0, round(cx - px_w / 2))
    top = max(0, round(cy - px_h / 2))
    right = min(image_w, round(cx + px_w / 2))
    bottom = min(image_h, round(cy + px_h / 2))
    if right <= left:
        left, right = max(0, min(left, image_w - 1)), max(1, min(right, image_w))
        right = max(right, left + 1)
    if bottom <= top:
        top, bottom = max(0, min(top, image_h - 1)), max(1, min(bottom, image_h))
        bottom = max(bottom, top + 1)
    return CropRect(left=left, top=top, width=right - left, height=bottom - top)


@dataclass(frozen=True, slots=True)
class ManifestEntry:
    file: str
    crop: CropRect
    species: str
    source_conf: float

    def to_json(self) -> dict[str, Any]:
        return {"file": self.file, "crop": self.crop.to_json(),
                "species": self.species, "source_conf": self.source_conf}


@dataclass(frozen=True)
class ClassifierManifest:
    entries: tuple[ManifestEntry, ...] = ()
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"entries": [e.to_json() for e in self.entries],
                "provenance": dict(self.provenance)}


def build_classifier_manifest(
    results: DetectionsFile,
    dataset: Dataset,
    conf_threshold: float = 0.5,
    padding_scale: float = DEFAULT_PADDING,
    square: bool = DEFAULT_SQUARE,
    split_seed: int | None = None,
) -> ClassifierManifest:
    """Turn confident detections plus single-species labels into crop entries."""
    if not 0.0 <= conf_threshold <= 1.0:
        raise CropError(f"conf_threshold {conf_threshold} outside [0, 1]")
    entries = []
    skipped_unlabeled = 0
    skipped_multi_species = 0
    for im in results.images:
        record = dataset.images_by_file.get(im.file)
        if record is None:
            raise CropError(f"results file '{im.file}' not found in dataset")
        confident = [d for d in im.detections if d.conf >= conf_threshold]
        if not confident:
            continue
        species = dataset.species_of(record.id)
        if len(species) == 0:
            skipped_unlabeled += 1
            continue
        if len(species) > 1:
            skipped_multi_species += 1
            continue
        (label,) = species
        for det in confident:
            crop = compute_crop_rect(det.bbox, record.width, record.height,
                                     padding_scale, square)
            entries.append(ManifestEntry(file=im.file, crop=crop, species=label,
                                         source_conf=det.conf))
    provenance: dict[str, Any] = {
        "detector": results.info.get("detector", "unknown"),
        "detector_version": results.info.get("detector_version", "unknown"),
        "conf_threshold": conf_threshold,
        "padding_scale": padding_scale,
        "square": square,
        "skipped_unlabeled": skipped_unlabeled,
        "skipped_multi_species": skipped_multi_species,
    }
    if split_seed is not None:
        provenance["split_seed"] = split_seed
    return ClassifierManifest(entries=tuple(entries), provenance=provenance)


def serialize_manifest(manifest: ClassifierManifest) -> str:
    return canonical_dumps(manifest.to_json())


def parse_manifest(text: str | bytes) -> ClassifierManifest:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
        entries = tuple(
            ManifestEntry(file=e["file"], crop=CropRect(**e["crop"]),
                          species=e["species"], source_conf=e["source_conf"])
            for e in doc["entries"]
        )
        return ClassifierManifest(entries=entries, provenance=doc.get("provenance", {}))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CropError(f"malformed manifest document: {exc}") from None


def emit_crop_pixels(
    manifest: ClassifierManifest,
    media_root: Path | str,
    out_dir: Path | str,
    image_id_of: Mapping[str, str] | None = None,
) -> list[Path]:
    """IO adapter: cut each manifest rectangle out of its source image.

    Files are named ``<image-id>_<index>.png`` where the index counts
    entries per image. Requires Pillow; imported here so the core stays
    free of image decoding.
    """
    from PIL import Image

    media_root = Path(media_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    per_image_index: dict[str, int] = {}
    for entry in manifest.entries:
        index = per_image_index.get(entry.file, 0)
        per_image_index[entry.file] = index + 1
        image_id = (image_id_of or {}).get(entry.file, entry.file)
        safe_id = image_id.replace("/", "_").replace("\\", "_")
        source = media_root / entry.file
        if not source.exists():
            raise CropError(f"media file not found: {source}")
        with Image.open(source) as img:
            crop = img.crop((entry.crop.left, entry.crop.top,
                             entry.crop.left + entry.crop.width,
                             entry.crop.top + entry.crop.height))
            target = out_dir / f"{safe_id}_{index}.png"
            crop.save(target, format="PNG")
            written.append(target)
    return written
