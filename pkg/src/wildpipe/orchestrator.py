"""Sharded batch detection with checkpointing and deterministic merge.

A batch partitions the corpus into shards and runs each shard in its own
forked worker process, at most ``parallelism`` alive at once. Fork hands
the shard's records to the worker through inherited memory, so no task
payload ever crosses a pipe; a worker that dies for any reason (exception
or hard kill) is simply a nonzero exit code and goes through the same
bounded-retry path as an ordinary failure. Each worker persists one part
file; the coordinator merges the parts into a single canonical detections
file. The checkpoint directory makes an interrupted batch resumable:

    <checkpoint_dir>/
      plan.digest              content digest of the shard plan
      manifest                 one line per completed/failed shard:
                               "<shard_id>\t<part digest>\t<status>"
      parts/shard_<id>.detections

Part files are written with temp-file-then-rename, and the manifest is
appended and fsynced by the single coordinator thread, so any prefix of a
crashed run is a valid checkpoint. Given a deterministic detector the
merged output is byte-identical regardless of parallelism degree, shard
completion order, or interruption history.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass
from multiprocessing.connection import wait as wait_sentinels
from pathlib import Path
from typing import Sequence

from .canonical import canonical_dumps, file_digest, sha256_hex, write_bytes_atomic
from .coco_ct import Dataset, ImageRecord
from .detection import (
    Detector,
    DetectionsFile,
    ImageDetections,
    merge_results,
    parse_detections,
    serialize_detections,
)
from .errors import PipelineError

logger = logging.getLogger(__name__)

CONTIGUOUS = "contiguous"
ROUND_ROBIN = "round_robin"
STRATEGIES = (CONTIGUOUS, ROUND_ROBIN)

DEFAULT_MAX_RETRIES = 2
_BACKOFF_SECONDS = 0.05


class OrchestratorError(PipelineError):
    """Invalid plans, unusable checkpoints, or batch-level failures."""


class StaleCheckpointError(OrchestratorError):
    """Checkpoint directory belongs to a different shard plan."""


class PartialBatchError(OrchestratorError):
    """Some shards failed permanently; merge refused. Completed shards
    remain checkpointed, so a later resume only runs what is missing."""

    def __init__(self, failed_shard_ids: Sequence[int], report: "BatchReport"):
        self.failed_shard_ids = tuple(failed_shard_ids)
        self.report = report
        super().__init__(f"batch incomplete, failed shards: {list(self.failed_shard_ids)}")


@dataclass(frozen=True, slots=True)
class Shard:
    shard_id: int
    image_ids: tuple[str, ...]


@dataclass(frozen=True)
class ShardPlan:
    strategy: str
    shards: tuple[Shard, ...]

    def digest(self) -> str:
        doc = {"strategy": self.strategy,
               "shards": [[s.shard_id, list(s.image_ids)] for s in self.shards]}
        return sha256_hex(canonical_dumps(doc))

    @property
    def total_images(self) -> int:
        return sum(len(s.image_ids) for s in self.shards)


@dataclass(frozen=True, slots=True)
class ShardRun:
    """Timing record for one shard actually executed in this call."""

    shard_id: int
    images: int
    seconds: float
    attempts: int


@dataclass(frozen=True)
class BatchReport:
    images_processed: int
    shards_total: int
    shards_completed: int
    shards_failed: int
    shards_skipped: int
    wall_time: float
    shard_runs: tuple[ShardRun, ...]

    @property
    def retries(self) -> int:
        return sum(run.attempts - 1 for run in self.shard_runs)


def shard_sizes(total: int, worker_count: int) -> list[int]:
    """Near-equal partition sizes; the first ``total % worker_count`` shards
    get one extra image."""
    if worker_count < 1:
        raise OrchestratorError("worker_count must be at least 1")
    base, remainder = divmod(total, worker_count)
    return [base + (1 if i < remainder else 0) for i in range(worker_count)]


def plan_shards(dataset: Dataset, worker_count: int, strategy: str = CONTIGUOUS) -> ShardPlan:
    """Partition the corpus into one shard per worker.

    Contiguous shards preserve dataset order (locality of sequences);
    round-robin balances skewed shard content. Both yield sizes differing
    by at most one. Empty shards are allowed when images < workers.
    """
    if strategy not in STRATEGIES:
        raise OrchestratorError(f"unknown strategy '{strategy}', expected one of {STRATEGIES}")
    ids = [im.id for im in dataset.images]
    if strategy == ROUND_ROBIN:
        buckets = [ids[i::worker_count] for i in range(worker_count)]
    else:
        buckets = []
        offset = 0
        for size in shard_sizes(len(ids), worker_count):
            buckets.append(ids[offset:offset + size])
            offset += size
    return ShardPlan(strategy=strategy,
                     shards=tuple(Shard(i, tuple(b)) for i, b in enumerate(buckets)))


@dataclass(frozen=True)
class ExecDetector:
    """Adapter for an external per-shard detector executable.

    The command is invoked with two positional arguments: a shard manifest
    path (newline-delimited file names) and the output part path. Exit
    code 0 means success; anything else fails the shard. The produced part
    is validated and re-serialized canonically so digests stay
    deterministic regardless of the tool's own formatting.
    """

    command: str
    name: str = "exec"
    version: str = "unknown"


def _part_path(checkpoint_dir: Path, shard_id: int) -> Path:
    return checkpoint_dir / "parts" / f"shard_{shard_id}.detections"


def _execute_shard(
    shard: Shard,
    records: tuple[ImageRecord, ...],
    detector: Detector | ExecDetector,
    part_path: str,
) -> int:
    """Worker-side: run one shard and persist its part atomically."""
    if isinstance(detector, ExecDetector):
        part = _run_exec_shard(detector, records, part_path)
    else:
        images = tuple(ImageDetections(file=rec.file_name, detections=tuple(detector.detect(rec)))
                       for rec in records)
        part = DetectionsFile(
            info={"detector": detector.name, "detector_version": detector.version,
                  "shard_id": shard.shard_id},
            detection_categories=dict(detector.categories),
            images=images,
        )
    write_bytes_atomic(part_path, serialize_detections(part).encode("utf-8"))
    return shard.shard_id


def _run_exec_shard(detector: ExecDetector, records: tuple[ImageRecord, ...],
                    part_path: str) -> DetectionsFile:
    expected = {rec.file_name for rec in records}
    with tempfile.TemporaryDirectory(prefix="wildpipe-shard-") as tmp:
        manifest = Path(tmp) / "manifest.txt"
        raw_out = Path(tmp) / "part.json"
        manifest.write_text("".join(f"{rec.file_name}\n" for rec in records), encoding="utf-8")
        proc = subprocess.run([detector.command, str(manifest), str(raw_out)],
                              capture_output=True, text=True)
        if proc.returncode != 0:
            raise OrchestratorError(
                f"external detector exited {proc.returncode}: {proc.stderr.strip()[:500]}")
        part = parse_detections(raw_out.read_bytes())
    produced = {im.file for im in part.images}
    if produced != expected:
        missing = sorted(expected - produced)[:5]
        surplus = sorted(produced - expected)[:5]
        raise OrchestratorError(
            f"external detector output does not match shard manifest "
            f"(missing {missing}, surplus {surplus})")
    info = {"detector": detector.name, "detector_version": detector.version}
    return DetectionsFile(info=info, detection_categories=part.detection_categories,
                          images=part.images)


class _Manifest:
    """Append-only shard completion journal; single coordinator writer."""

    def __init__(self, path: Path):
        self.path = path

    def read(self) -> dict[int, tuple[str, str]]:
        state: dict[int, tuple[str, str]] = {}
        if not self.path.exists():
            return state
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            shard_id, digest, status = line.split("\t")
            state[int(shard_id)] = (digest, status)
        return state

    def append(self, shard_id: int, digest: str, status: str) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{shard_id}\t{digest}\t{status}\n")
            fh.flush()
            os.fsync(fh.fileno())


def run_batch(
    dataset: Dataset,
    plan: ShardPlan,
    detector: Detector | ExecDetector,
    parallelism: int = 1,
    checkpoint_dir: Path | str = "checkpoint",
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> tuple[DetectionsFile, BatchReport]:
    """Execute every shard of a fresh batch and merge the parts."""
    checkpoint_dir = Path(checkpoint_dir)
    _init_checkpoint(checkpoint_dir, plan, fresh=True)
    return _drive(dataset, plan, detector, parallelism, checkpoint_dir,
                  pending={s.shard_id for s in plan.shards}, skipped=0,
                  max_retries=max_retries)


def resume_batch(
    dataset: Dataset,
    plan: ShardPlan,
    detector: Detector | ExecDetector,
    parallelism: int = 1,
    checkpoint_dir: Path | str = "checkpoint",
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> tuple[DetectionsFile, BatchReport]:
    """Finish an interrupted batch, re-executing only what is not proven done.

    A completed shard is skipped only when the manifest digest matches the
    part file on disk; a corrupted or missing part gets re-executed. The
    checkpoint must carry this plan's digest, otherwise it is stale.
    """
    checkpoint_dir = Path(checkpoint_dir)
    digest_path = checkpoint_dir / "plan.digest"
    if not digest_path.exists():
        raise StaleCheckpointError(f"no checkpoint found in {checkpoint_dir}")
    recorded = digest_path.read_text(encoding="utf-8").strip()
    if recorded != plan.digest():
        raise StaleCheckpointError("checkpoint belongs to a different shard plan")

    manifest = _Manifest(checkpoint_dir / "manifest")
    state = manifest.read()
    pending: set[int] = set()
    for shard in plan.shards:
        digest, status = state.get(shard.shard_id, ("-", "missing"))
        part = _part_path(checkpoint_dir, shard.shard_id)
        if status == "completed" and part.exists() and file_digest(part) == digest:
            continue
        if status == "completed":
            logger.warning("shard %d part corrupted or missing, re-executing", shard.shard_id)
        pending.add(shard.shard_id)
    skipped = len(plan.shards) - len(pending)
    return _drive(dataset, plan, detector, parallelism, checkpoint_dir,
                  pending=pending, skipped=skipped, max_retries=max_retries)


def _init_checkpoint(checkpoint_dir: Path, plan: ShardPlan, fresh: bool) -> None:
    (checkpoint_dir / "parts").mkdir(parents=True, exist_ok=True)
    write_bytes_atomic(checkpoint_dir / "plan.digest", (plan.digest() + "\n").encode())
    if fresh:
        manifest = checkpoint_dir / "manifest"
        if manifest.exists():
            manifest.unlink()


def _drive(
    dataset: Dataset,
    plan: ShardPlan,
    detector: Detector | ExecDetector,
    parallelism: int,
    checkpoint_dir: Path,
    pending: set[int],
    skipped: int,
    max_retries: int,
) -> tuple[DetectionsFile, BatchReport]:
    if parallelism < 1:
        raise OrchestratorError("parallelism must be at least 1")
    started = time.monotonic()
    shards_by_id = {s.shard_id: s for s in plan.shards}
    records_of = {
        sid: tuple(dataset.images_by_id[i] if i in dataset.images_by_id else _missing(i)
                   for i in shards_by_id[sid].image_ids)
        for sid in pending
    }
    manifest = _Manifest(checkpoint_dir / "manifest")
    ctx = multiprocessing.get_context("fork")

    runs: list[ShardRun] = []
    failed: list[int] = []
    attempts: dict[int, int] = {sid: 0 for sid in pending}
    started_at: dict[int, float] = {}
    # (shard_id, not-before time); retries are appended with a backoff due
    # time, so the queue stays sorted by due time
    queue: list[tuple[int, float]] = [(sid, 0.0) for sid in sorted(pending)]
    running: dict[object, tuple[multiprocessing.Process, int]] = {}

    def launch(sid: int) -> None:
        attempts[sid] += 1
        started_at[sid] = time.monotonic()
        proc = ctx.Process(
            target=_execute_shard,
            args=(shards_by_id[sid], records_of[sid], detector,
                  str(_part_path(checkpoint_dir, sid))),
            daemon=True,
        )
        proc.start()
        running[proc.sentinel] = (proc, sid)

    def reap(sentinel: object) -> None:
        proc, sid = running.pop(sentinel)
        proc.join()
        part = _part_path(checkpoint_dir, sid)
        if proc.exitcode == 0 and part.exists():
            manifest.append(sid, file_digest(part), "completed")
            runs.append(ShardRun(
                shard_id=sid,
                images=len(shards_by_id[sid].image_ids),
                seconds=time.monotonic() - started_at[sid],
                attempts=attempts[sid],
            ))
        elif attempts[sid] <= max_retries:
            logger.warning("shard %d attempt %d exited with code %s, retrying",
                           sid, attempts[sid], proc.exitcode)
            queue.append((sid, time.monotonic() + _BACKOFF_SECONDS * 2 ** (attempts[sid] - 1)))
        else:
            logger.error("shard %d failed permanently (exit code %s)", sid, proc.exitcode)
            manifest.append(sid, "-", "failed")
            failed.append(sid)

    while queue or running:
        now = time.monotonic()
        while queue and len(running) < parallelism and queue[0][1] <= now:
            sid, _ = queue.pop(0)
            launch(sid)
        if running:
            for sentinel in wait_sentinels(list(running), timeout=0.2):
                reap(sentinel)
        elif queue:
            time.sleep(max(0.0, queue[0][1] - time.monotonic()))

    completed_ids = [s.shard_id for s in plan.shards if s.shard_id not in failed]
    report = BatchReport(
        images_processed=sum(len(shards_by_id[sid].image_ids) for sid in completed_ids),
        shards_total=len(plan.shards),
        shards_completed=len(completed_ids),
        shards_failed=len(failed),
        shards_skipped=skipped,
        wall_time=time.monotonic() - started,
        shard_runs=tuple(sorted(runs, key=lambda r: r.shard_id)),
    )
    if failed:
        raise PartialBatchError(sorted(failed), report)

    parts = [parse_detections(_part_path(checkpoint_dir, s.shard_id).read_bytes())
             for s in plan.shards]
    merged = merge_results(parts) if parts else DetectionsFile()
    return merged, report


def _missing(image_id: str) -> ImageRecord:
    raise OrchestratorError(f"plan references image id '{image_id}' not in dataset")
