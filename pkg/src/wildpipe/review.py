"""Human review state: confidence-banded queues and an append-only verdict log.

Verdicts are events, never rows: the log on disk is one JSON object per
line in canonical field order, appended and fsynced before the caller is
acknowledged. All derived state (which items are reviewed, what the final
decision per detection is) is a left fold over the log, so replaying the
file after a crash reproduces exactly the state that was acknowledged.
Later verdicts on the same target supersede earlier ones; a verdict with
no detection index targets the whole image and acts as the default for
detections without their own verdict.
"""

from __future__ import annotations

import json
import os
import threading
from bisect import bisect_right
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .coco_ct import Dataset
from .crops import ClassifierManifest, ManifestEntry, compute_crop_rect
from .detection import Detection, DetectionsFile
from .errors import PipelineError

CONFIRM = "confirm"
REJECT = "reject"
RELABEL = "relabel"
DECISIONS = (CONFIRM, REJECT, RELABEL)

PENDING = "pending"
REVIEWED = "reviewed"


class ReviewError(PipelineError):
    pass


@dataclass(frozen=True, slots=True)
class ReviewItem:
    image_id: str
    file: str
    detections: tuple[Detection, ...]
    max_conf: float
    band: int
    status: str

    def to_json(self) -> dict[str, Any]:
        return {"image_id": self.image_id, "file": self.file,
                "detections": [d.to_json() for d in self.detections],
                "max_conf": self.max_conf, "band": self.band, "status": self.status}


def build_queue(
    results: DetectionsFile,
    bands: Sequence[float],
    order: str = "desc",
    image_id_of: Mapping[str, str] | None = None,
    reviewed: Iterable[str] = (),
) -> list[ReviewItem]:
    """Assign each image the band holding its max confidence and sort by it.

    Bands are half-open [lo, hi) except the last, which is closed at the
    top. Images whose confidence falls outside the boundary range are left
    out. Ties are broken by ascending image id.
    """
    if len(bands) < 2:
        raise ReviewError("need at least two band boundaries")
    for a, b in zip(bands, bands[1:]):
        if b <= a:
            raise ReviewError(f"band boundaries must be strictly ascending, got {a} before {b}")
    if order not in ("asc", "desc"):
        raise ReviewError(f"order must be 'asc' or 'desc', got {order!r}")
    reviewed_set = set(reviewed)
    id_of = image_id_of or {}

    items = []
    last_band = len(bands) - 2
    for im in results.images:
        conf = im.max_detection_conf
        if conf < bands[0] or conf > bands[-1]:
            continue
        band = min(bisect_right(bands, conf) - 1, last_band)
        image_id = id_of.get(im.file, im.file)
        items.append(ReviewItem(
            image_id=image_id,
            file=im.file,
            detections=im.detections,
            max_conf=conf,
            band=band,
            status=REVIEWED if image_id in reviewed_set else PENDING,
        ))
    items.sort(key=lambda item: (-item.max_conf if order == "desc" else item.max_conf,
                                 item.image_id))
    return items


@dataclass(frozen=True, slots=True)
class Verdict:
    verdict_id: int
    image_id: str
    detection_index: int | None
    decision: str
    species: str | None
    reviewer: str
    at: str

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "verdict_id": self.verdict_id,
            "image_id": self.image_id,
            "detection_index": self.detection_index,
            "decision": self.decision,
            "reviewer": self.reviewer,
            "at": self.at,
        }
        if self.species is not None:
            out["species"] = self.species
        return out


class ReviewState:
    """Fold of the verdict log: latest verdict per (image, detection) target."""

    def __init__(self) -> None:
        self.by_target: dict[tuple[str, int | None], Verdict] = {}
        self.reviewed_images: set[str] = set()
        self.count = 0
        self.last_id = 0

    def apply(self, verdict: Verdict) -> None:
        self.by_target[(verdict.image_id, verdict.detection_index)] = verdict
        self.reviewed_images.add(verdict.image_id)
        self.count += 1
        self.last_id = verdict.verdict_id

    def final_decision(self, image_id: str, detection_index: int) -> Verdict | None:
        """Per-detection verdict wins; image-wide verdict is the fallback."""
        specific = self.by_target.get((image_id, detection_index))
        if specific is not None:
            return specific
        return self.by_target.get((image_id, None))

    def snapshot(self) -> dict[tuple[str, int | None], tuple[int, str, str | None]]:
        return {target: (v.verdict_id, v.decision, v.species)
                for target, v in self.by_target.items()}


class VerdictLog:
    """Durable append-only verdict store with fold-derived state.

    Appends are serialized by a lock and fsynced before the new verdict is
    returned, so an acknowledged verdict survives a crash. Replay ignores
    a torn trailing line (it was never acknowledged).
    """

    def __init__(
        self,
        path: Path | str,
        dataset: Dataset | None = None,
        results: DetectionsFile | None = None,
        clock: Callable[[], str] | None = None,
    ):
        self.path = Path(path)
        self.dataset = dataset
        self.results = results
        self._clock = clock or (lambda: datetime.now(timezone.utc).isoformat())
        self._lock = threading.Lock()
        self.state = ReviewState()
        self.verdicts: list[Verdict] = []
        for verdict in replay_verdicts(self.path):
            self.verdicts.append(verdict)
            self.state.apply(verdict)
        self._fh = open(self.path, "a", encoding="utf-8")

    def close(self) -> None:
        self._fh.close()

    def append(
        self,
        image_id: str,
        decision: str,
        detection_index: int | None = None,
        species: str | None = None,
        reviewer: str = "",
    ) -> Verdict:
        """Validate, persist, and apply one verdict; returns it with its id."""
        with self._lock:
            self._validate(image_id, decision, detection_index, species)
            verdict = Verdict(
                verdict_id=self.state.last_id + 1,
                image_id=image_id,
                detection_index=detection_index,
                decision=decision,
                species=species if decision == RELABEL else None,
                reviewer=reviewer,
                at=self._clock(),
            )
            line = json.dumps(verdict.to_json(), sort_keys=True, ensure_ascii=False)
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.verdicts.append(verdict)
            self.state.apply(verdict)
            return verdict

    def _validate(self, image_id: str, decision: str, detection_index: int | None,
                  species: str | None) -> None:
        if decision not in DECISIONS:
            raise ReviewError(f"unknown decision {decision!r}")
        if decision == RELABEL:
            if not species:
                raise ReviewError("relabel requires a species")
            if self.dataset is not None and species not in {c.name for c in self.dataset.categories}:
                raise ReviewError(f"relabel species '{species}' not in project categories")
        if self.dataset is not None and image_id not in self.dataset.images_by_id:
            raise ReviewError(f"unknown image id '{image_id}'")
        if detection_index is not None:
            if detection_index < 0:
                raise ReviewError(f"detection_index {detection_index} is negative")
            if self.results is not None and self.dataset is not None:
                record = self.dataset.images_by_id.get(image_id)
                im = self.results.by_file.get(record.file_name) if record else None
                if im is None or detection_index >= len(im.detections):
                    raise ReviewError(
                        f"detection_index {detection_index} invalid for image '{image_id}'")


def replay_verdicts(path: Path | str) -> list[Verdict]:
    """Rebuild the verdict sequence from disk; torn trailing lines dropped."""
    path = Path(path)
    if not path.exists():
        return []
    raw = path.read_text(encoding="utf-8")
    verdicts = []
    last_id = 0
    for line in raw.split("\n")[:-1]:  # a complete record always ends with LF
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            verdict = Verdict(
                verdict_id=doc["verdict_id"],
                image_id=doc["image_id"],
                detection_index=doc.get("detection_index"),
                decision=doc["decision"],
                species=doc.get("species"),
                reviewer=doc.get("reviewer", ""),
                at=doc.get("at", ""),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ReviewError(f"corrupt verdict log line: {exc}") from None
        if verdict.verdict_id <= last_id:
            raise ReviewError(
                f"verdict ids not monotonically increasing at id {verdict.verdict_id}")
        last_id = verdict.verdict_id
        verdicts.append(verdict)
    return verdicts


def export_verified(
    state: ReviewState,
    results: DetectionsFile,
    dataset: Dataset,
    padding_scale: float = 1.1,
    square: bool = True,
) -> ClassifierManifest:
    """Manifest of detections whose folded decision is confirm or relabel.

    A relabel overrides the image-level species; a confirm uses the
    image's single non-empty label and is skipped (and counted) when the
    image has zero or multiple species labels. Rejected and unreviewed
    detections are excluded.
    """
    entries = []
    skipped_unlabeled = 0
    skipped_multi_species = 0
    for im in results.images:
        record = dataset.images_by_file.get(im.file)
        if record is None:
            continue
        species_labels = dataset.species_of(record.id)
        for index, det in enumerate(im.detections):
            verdict = state.final_decision(record.id, index)
            if verdict is None or verdict.decision == REJECT:
                continue
            if verdict.decision == RELABEL:
                label = verdict.species
            elif len(species_labels) == 1:
                (label,) = species_labels
            elif not species_labels:
                skipped_unlabeled += 1
                continue
            else:
                skipped_multi_species += 1
                continue
            crop = compute_crop_rect(det.bbox, record.width, record.height,
                                     padding_scale, square)
            entries.append(ManifestEntry(file=im.file, crop=crop, species=label,
                                         source_conf=det.conf))
    provenance = {
        "source": "review_export",
        "detector": results.info.get("detector", "unknown"),
        "padding_scale": padding_scale,
        "square": square,
        "skipped_unlabeled": skipped_unlabeled,
        "skipped_multi_species": skipped_multi_species,
    }
    return ClassifierManifest(entries=tuple(entries), provenance=provenance)
