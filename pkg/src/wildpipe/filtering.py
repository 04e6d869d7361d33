"""Confidence-threshold elimination of empty images.

An image is kept iff its max detection confidence is >= the threshold
(inclusive keep, so a 1.0 detection survives a 1.0 threshold). Eliminated
images are returned as their own detections file rather than discarded,
so review tooling can audit what was dropped.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Any, Sequence

from .detection import DetectionsFile
from .errors import PipelineError

DEFAULT_THRESHOLD = 0.5


class FilterError(PipelineError):
    pass


@dataclass(frozen=True, slots=True)
class FilterReport:
    threshold: float
    total: int
    kept: int
    eliminated: int
    eliminated_fraction: float

    def to_json(self) -> dict[str, Any]:
        return {"threshold": self.threshold, "total": self.total, "kept": self.kept,
                "eliminated": self.eliminated, "eliminated_fraction": self.eliminated_fraction}


def _check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold <= 1.0:
        raise FilterError(f"threshold {threshold} outside [0, 1]")


def filter_empty(
    results: DetectionsFile, threshold: float = DEFAULT_THRESHOLD
) -> tuple[DetectionsFile, DetectionsFile, FilterReport]:
    """Split results into (kept, eliminated, report) at the threshold."""
    _check_threshold(threshold)
    kept = tuple(im for im in results.images if im.max_detection_conf >= threshold)
    eliminated = tuple(im for im in results.images if im.max_detection_conf < threshold)
    total = len(results.images)
    report = FilterReport(
        threshold=threshold,
        total=total,
        kept=len(kept),
        eliminated=len(eliminated),
        eliminated_fraction=len(eliminated) / total if total else 0.0,
    )
    make = lambda images: DetectionsFile(info=dict(results.info),
                                         detection_categories=dict(results.detection_categories),
                                         images=images)
    return make(kept), make(eliminated), report


def threshold_sweep(results: DetectionsFile, thresholds: Sequence[float]) -> list[FilterReport]:
    """One report per threshold; eliminated counts are monotone in threshold."""
    if not thresholds:
        raise FilterError("no thresholds given")
    for a, b in zip(thresholds, thresholds[1:]):
        if b <= a:
            raise FilterError(f"thresholds must be strictly ascending, got {a} before {b}")
    for t in thresholds:
        _check_threshold(t)
    confs = sorted(im.max_detection_conf for im in results.images)
    total = len(confs)
    reports = []
    for t in thresholds:
        eliminated = bisect_left(confs, t)
        reports.append(FilterReport(
            threshold=t,
            total=total,
            kept=total - eliminated,
            eliminated=eliminated,
            eliminated_fraction=eliminated / total if total else 0.0,
        ))
    return reports
