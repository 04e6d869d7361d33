"""Repeat-detection elimination.

False positives from rocks and branches tend to produce near-identical
boxes across many images at one camera location. This module finds those
suspicious clusters and suppresses their detections, with an allowlist
escape hatch for clusters a human has confirmed to be real animals
(e.g. one sleeping in place).

Clustering is greedy first-fit per location: detections are visited in
(file name, detection index) order and join the earliest cluster whose
representative box overlaps at or above the IoU threshold, else they found
a new cluster. A spatial grid over box centers prunes candidate clusters
without changing the result (a zero-intersection pair can never reach the
threshold). Cluster ids and membership are therefore deterministic for a
given input, regardless of how the input was produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import ceil
from typing import Any, Iterable, Mapping, Sequence

from .canonical import canonical_dumps
from .coco_ct import Dataset
from .detection import BBox, Detection, DetectionsFile, ImageDetections, iou
from .errors import PipelineError

_GRID_CELL = 0.08


class RdeError(PipelineError):
    pass


@dataclass(frozen=True, slots=True)
class RdeConfig:
    iou_threshold: float = 0.85
    min_count: int = 10
    min_conf: float = 0.1
    require_consecutive: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise RdeError(f"iou_threshold {self.iou_threshold} outside (0, 1]")
        if self.min_count < 2:
            raise RdeError(f"min_count must be at least 2, got {self.min_count}")
        if not 0.0 <= self.min_conf <= 1.0:
            raise RdeError(f"min_conf {self.min_conf} outside [0, 1]")

    def to_json(self) -> dict[str, Any]:
        return {"iou_threshold": self.iou_threshold, "min_count": self.min_count,
                "min_conf": self.min_conf, "require_consecutive": self.require_consecutive}


@dataclass(frozen=True, slots=True)
class ClusterMember:
    file: str
    index: int
    bbox: BBox
    conf: float

    def to_json(self) -> dict[str, Any]:
        return {"file": self.file, "index": self.index,
                "bbox": self.bbox.to_json(), "conf": self.conf}


@dataclass(frozen=True)
class SuspiciousCluster:
    cluster_id: str
    location: str
    representative_bbox: BBox
    members: tuple[ClusterMember, ...]
    distinct_image_count: int
    consecutive: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "location": self.location,
            "representative_bbox": self.representative_bbox.to_json(),
            "members": [m.to_json() for m in self.members],
            "distinct_image_count": self.distinct_image_count,
            "consecutive": self.consecutive,
        }


@dataclass(frozen=True, slots=True)
class SuppressionReport:
    detections_suppressed: int
    images_affected: int
    clusters_applied: int
    clusters_allowlisted: int

    def to_json(self) -> dict[str, Any]:
        return {"detections_suppressed": self.detections_suppressed,
                "images_affected": self.images_affected,
                "clusters_applied": self.clusters_applied,
                "clusters_allowlisted": self.clusters_allowlisted}


class _OpenCluster:
    __slots__ = ("order", "representative", "members", "files")

    def __init__(self, order: int, representative: BBox):
        self.order = order
        self.representative = representative
        self.members: list[ClusterMember] = []
        self.files: set[str] = set()


class _Grid:
    """Center-cell index over open clusters; exact thanks to IoU > 0
    requiring overlap, hence bounded center distance."""

    def __init__(self) -> None:
        self.cells: dict[tuple[int, int], list[_OpenCluster]] = {}
        self.max_w = 0.0
        self.max_h = 0.0

    @staticmethod
    def _center_cell(box: BBox) -> tuple[int, int]:
        return (int((box.x + box.w / 2) / _GRID_CELL), int((box.y + box.h / 2) / _GRID_CELL))

    def add(self, cluster: _OpenCluster) -> None:
        box = cluster.representative
        self.cells.setdefault(self._center_cell(box), []).append(cluster)
        self.max_w = max(self.max_w, box.w)
        self.max_h = max(self.max_h, box.h)

    def candidates(self, box: BBox) -> Iterable[_OpenCluster]:
        cx, cy = self._center_cell(box)
        rx = ceil(((box.w + self.max_w) / 2) / _GRID_CELL) + 1
        ry = ceil(((box.h + self.max_h) / 2) / _GRID_CELL) + 1
        found = []
        for gx in range(cx - rx, cx + rx + 1):
            for gy in range(cy - ry, cy + ry + 1):
                found.extend(self.cells.get((gx, gy), ()))
        found.sort(key=lambda c: c.order)
        return found


def find_suspicious_clusters(
    results: DetectionsFile,
    dataset: Dataset,
    config: RdeConfig = RdeConfig(),
) -> tuple[SuspiciousCluster, ...]:
    """Group near-stationary detections per location into clusters.

    Emits clusters spanning at least ``min_count`` distinct images; with
    ``require_consecutive`` only clusters whose member images occupy a
    contiguous run of the location's frame order (datetime when every
    image at the location has one, file-name order otherwise).
    """
    by_location: dict[str, list[tuple[str, int, Detection]]] = {}
    for im in results.images:
        record = dataset.images_by_file.get(im.file)
        if record is None:
            raise RdeError(f"results file '{im.file}' not found in dataset")
        bucket = by_location.setdefault(record.location, [])
        for index, det in enumerate(im.detections):
            if det.conf >= config.min_conf:
                bucket.append((im.file, index, det))

    clusters: list[SuspiciousCluster] = []
    for location in sorted(by_location):
        detections = by_location[location]  # already in (file, index) order
        open_clusters: list[_OpenCluster] = []
        grid = _Grid()
        for file, index, det in detections:
            target = None
            for candidate in grid.candidates(det.bbox):
                if iou(candidate.representative, det.bbox) >= config.iou_threshold:
                    target = candidate
                    break
            if target is None:
                target = _OpenCluster(order=len(open_clusters), representative=det.bbox)
                open_clusters.append(target)
                grid.add(target)
            target.members.append(ClusterMember(file=file, index=index, bbox=det.bbox, conf=det.conf))
            target.files.add(file)

        frame_order = _frame_order(dataset, location)
        for open_cluster in open_clusters:
            if len(open_cluster.files) < config.min_count:
                continue
            consecutive = _is_consecutive(open_cluster.files, frame_order)
            if config.require_consecutive and not consecutive:
                continue
            clusters.append(SuspiciousCluster(
                cluster_id=f"{location}:{open_cluster.order}",
                location=location,
                representative_bbox=open_cluster.representative,
                members=tuple(open_cluster.members),
                distinct_image_count=len(open_cluster.files),
                consecutive=consecutive,
            ))
    return tuple(clusters)


def _frame_order(dataset: Dataset, location: str) -> dict[str, int]:
    """Position of each file in the location's frame sequence."""
    records = [r for r in dataset.images if r.location == location]
    if records and all(r.datetime is not None for r in records):
        records.sort(key=lambda r: (r.datetime, r.file_name))
    else:
        records.sort(key=lambda r: r.file_name)
    return {r.file_name: i for i, r in enumerate(records)}


def _is_consecutive(files: set[str], frame_order: Mapping[str, int]) -> bool:
    positions = sorted(frame_order[f] for f in files)
    return positions[-1] - positions[0] == len(positions) - 1


def apply_suppression(
    results: DetectionsFile,
    clusters: Sequence[SuspiciousCluster],
    allowlist: Iterable[str] = (),
) -> tuple[DetectionsFile, SuppressionReport]:
    """Remove every detection belonging to a non-allowlisted cluster.

    Member detections are matched by exact box content (index as a hint),
    so re-applying the same clusters to already-suppressed output is a
    no-op rather than an error. A member whose file is absent from the
    results is a stale reference and is refused.
    """
    kept, _, report = partition_suppressed(results, clusters, allowlist)
    return kept, report


def partition_suppressed(
    results: DetectionsFile,
    clusters: Sequence[SuspiciousCluster],
    allowlist: Iterable[str] = (),
) -> tuple[DetectionsFile, DetectionsFile, SuppressionReport]:
    """Like apply_suppression but also returns the suppressed sidecar."""
    allow = set(allowlist)
    marked: dict[str, set[int]] = {}
    applied = 0
    for cluster in clusters:
        if cluster.cluster_id in allow:
            continue
        applied += 1
        for member in cluster.members:
            image = results.by_file.get(member.file)
            if image is None:
                raise RdeError(
                    f"stale member reference: file '{member.file}' of cluster "
                    f"'{cluster.cluster_id}' not in results")
            taken = marked.setdefault(member.file, set())
            index = _locate(image.detections, member, taken)
            if index is not None:
                taken.add(index)

    kept_images = []
    suppressed_images = []
    suppressed_count = 0
    affected = 0
    for im in results.images:
        taken = marked.get(im.file)
        if not taken:
            kept_images.append(im)
            continue
        affected += 1
        suppressed_count += len(taken)
        kept_images.append(ImageDetections(
            file=im.file,
            detections=tuple(d for i, d in enumerate(im.detections) if i not in taken)))
        suppressed_images.append(ImageDetections(
            file=im.file,
            detections=tuple(d for i, d in enumerate(im.detections) if i in taken)))

    make = lambda images: DetectionsFile(info=dict(results.info),
                                         detection_categories=dict(results.detection_categories),
                                         images=tuple(images))
    report = SuppressionReport(
        detections_suppressed=suppressed_count,
        images_affected=affected,
        clusters_applied=applied,
        clusters_allowlisted=len([c for c in clusters if c.cluster_id in allow]),
    )
    return make(kept_images), make(suppressed_images), report


def _locate(detections: Sequence[Detection], member: ClusterMember,
            taken: set[int]) -> int | None:
    """Find the member's detection: index hint first, then box content."""
    if member.index < len(detections) and member.index not in taken:
        if detections[member.index].bbox == member.bbox:
            return member.index
    for i, det in enumerate(detections):
        if i not in taken and det.bbox == member.bbox:
            return i
    return None


def serialize_clusters(clusters: Sequence[SuspiciousCluster], config: RdeConfig) -> str:
    return canonical_dumps({"config": config.to_json(),
                            "clusters": [c.to_json() for c in clusters]})


def parse_clusters(text: str | bytes) -> tuple[tuple[SuspiciousCluster, ...], RdeConfig]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
        config = RdeConfig(**doc["config"])
        clusters = tuple(
            SuspiciousCluster(
                cluster_id=c["cluster_id"],
                location=c["location"],
                representative_bbox=BBox(*c["representative_bbox"]),
                members=tuple(ClusterMember(file=m["file"], index=m["index"],
                                            bbox=BBox(*m["bbox"]), conf=m["conf"])
                              for m in c["members"]),
                distinct_image_count=c["distinct_image_count"],
                consecutive=c["consecutive"],
            )
            for c in doc["clusters"]
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise RdeError(f"malformed clusters document: {exc}") from None
    return clusters, config


def load_allowlist(path: Any) -> set[str]:
    """Newline-delimited cluster ids; blank lines and '#' comments ignored."""
    text = open(path, encoding="utf-8").read()
    return {line.strip() for line in text.splitlines()
            if line.strip() and not line.strip().startswith("#")}
