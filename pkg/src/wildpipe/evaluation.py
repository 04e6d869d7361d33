"""Image-level average precision of animal presence.

Ground truth here has no boxes: a species label on an image indicates an
animal is present. Each dataset image is scored by its max detection
confidence (0.0 when the detector produced nothing for it, so misses hurt
the ranking), and unsmoothed retrieval-style AP is computed over that
ranking:

    AP = (1/P) * sum over true-positive ranks k of (TPs among top k) / k

sorted by descending score with ties broken by ascending image id. No
interpolation variant is applied; the report names the variant so
downstream consumers know what they are reading.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .coco_ct import Dataset
from .detection import DetectionsFile
from .errors import PipelineError

AP_VARIANT = "unsmoothed_retrieval"


class EvaluationError(PipelineError):
    pass


@dataclass(frozen=True, slots=True)
class ScoredImage:
    image_id: str
    score: float
    positive: bool


@dataclass(frozen=True, slots=True)
class RegionStats:
    ap: float | None
    positives: int
    total: int

    def to_json(self) -> dict[str, Any]:
        return {"ap": self.ap, "positives": self.positives, "total": self.total}


@dataclass(frozen=True)
class EvalReport:
    overall: RegionStats
    regions: Mapping[str, RegionStats]

    def to_json(self) -> dict[str, Any]:
        return {"ap_variant": AP_VARIANT,
                "overall": self.overall.to_json(),
                "regions": {name: stats.to_json() for name, stats in sorted(self.regions.items())}}


def image_level_scores(results: DetectionsFile, dataset: Dataset) -> tuple[ScoredImage, ...]:
    """One scored entry per dataset image.

    Positive means the image carries at least one non-empty species label;
    images absent from the results score 0.0 (a scored miss). Results for
    files outside the dataset are ignored, since they have no label.
    """
    scored = []
    for record in dataset.images:
        im = results.by_file.get(record.file_name)
        scored.append(ScoredImage(
            image_id=record.id,
            score=im.max_detection_conf if im is not None else 0.0,
            positive=not dataset.is_empty_labeled(record.id),
        ))
    return tuple(scored)


def average_precision(scored: Sequence[ScoredImage]) -> float:
    """Unsmoothed AP over the confidence ranking; needs >= 1 positive."""
    positives = sum(1 for s in scored if s.positive)
    if positives == 0:
        raise EvaluationError("average precision undefined: no positive images")
    ranked = sorted(scored, key=lambda s: (-s.score, s.image_id))
    true_positives = 0
    total = 0.0
    for rank, item in enumerate(ranked, start=1):
        if item.positive:
            true_positives += 1
            total += true_positives / rank
    return total / positives


def per_region_report(
    results: DetectionsFile,
    dataset: Dataset,
    region_of: Mapping[str, str],
) -> EvalReport:
    """Group scores by the region of each image's location and report AP.

    A region with zero positives gets ap=None (the metric is undefined
    there); an unmapped location is an error naming it.
    """
    scored = image_level_scores(results, dataset)
    by_region: dict[str, list[ScoredImage]] = {}
    for record, item in zip(dataset.images, scored):
        region = region_of.get(record.location)
        if region is None:
            raise EvaluationError(f"location '{record.location}' has no region mapping")
        by_region.setdefault(region, []).append(item)

    regions = {name: _stats(items) for name, items in by_region.items()}
    return EvalReport(overall=_stats(list(scored)), regions=regions)


def _stats(items: Sequence[ScoredImage]) -> RegionStats:
    positives = sum(1 for s in items if s.positive)
    ap = average_precision(items) if positives else None
    return RegionStats(ap=ap, positives=positives, total=len(items))
