"""Camera-trap image pipeline toolkit.

Four stages: ingest labels into the COCO-Camera-Traps format, run a
pluggable animal detector over sharded image batches, post-process the
results (empty-image filtering, repeat-detection elimination), and
evaluate or hand off to human review.
"""

from .coco_ct import (
    AnnotationRecord,
    Category,
    Dataset,
    DatasetError,
    DuplicateIdError,
    ImageRecord,
    ReferentialError,
    StructuralError,
    convert_foldered_labels,
    parse_dataset,
    serialize_dataset,
)
from .crops import (
    ClassifierManifest,
    CropRect,
    ManifestEntry,
    build_classifier_manifest,
    compute_crop_rect,
)
from .detection import (
    BBox,
    Detection,
    DetectionsError,
    DetectionsFile,
    ImageDetections,
    OracleDetector,
    StubDetector,
    iou,
    merge_results,
    oracle_detect,
    parse_detections,
    serialize_detections,
    stub_detect,
)
from .errors import PipelineError
from .evaluation import (
    EvalReport,
    EvaluationError,
    ScoredImage,
    average_precision,
    image_level_scores,
    per_region_report,
)
from .filtering import FilterReport, filter_empty, threshold_sweep
from .orchestrator import (
    BatchReport,
    ExecDetector,
    OrchestratorError,
    PartialBatchError,
    ShardPlan,
    StaleCheckpointError,
    plan_shards,
    resume_batch,
    run_batch,
    shard_sizes,
)
from .rde import (
    RdeConfig,
    SuppressionReport,
    SuspiciousCluster,
    apply_suppression,
    find_suspicious_clusters,
    partition_suppressed,
)
from .review import ReviewItem, Verdict, VerdictLog, build_queue, export_verified

__version__ = "0.1.0"
