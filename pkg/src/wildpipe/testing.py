"""Detector doubles for exercising the orchestrator.

These live in the package (not the test tree) because batch workers run in
separate processes and must be able to import them by qualified name. All
of them stay deterministic with respect to detection OUTPUT; the fault
injection only perturbs execution.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .coco_ct import ImageRecord
from .detection import DEFAULT_CATEGORIES, Detection, stub_detect


@dataclass(frozen=True)
class BusyStubDetector:
    """Stub detector that burns a fixed amount of CPU time per image, for
    measuring parallel speedup. The deadline is process CPU time, not wall
    time, so contended or SMT-shared cores cannot fake a speedup."""

    seed: int
    busy_ms: float = 5.0
    name: str = "busy-stub"
    version: str = "1.0"
    categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))

    def detect(self, image: ImageRecord) -> Sequence[Detection]:
        deadline = time.process_time() + self.busy_ms / 1000.0
        x = 1.0
        while time.process_time() < deadline:
            x = x * 1.000001 % 2.0
        return stub_detect(image, self.seed)


def _burn_cpu_seconds(seconds: float) -> None:
    deadline = time.process_time() + seconds
    x = 1.0
    while time.process_time() < deadline:
        x = x * 1.000001 % 2.0


def measure_parallel_cpu_throughput(workers: int, burn_seconds: float = 0.4) -> float:
    """Effective number of cores when ``workers`` CPU-bound processes run
    at once. SMT sibling threads and host co-tenancy yield well under one
    core per nominal CPU; a machine with ``workers`` real cores measures
    close to ``workers``."""
    import multiprocessing

    ctx = multiprocessing.get_context("fork")
    procs = [ctx.Process(target=_burn_cpu_seconds, args=(burn_seconds,), daemon=True)
             for _ in range(workers)]
    started = time.perf_counter()
    for p in procs:
        p.start()
    for p in procs:
        p.join()
    elapsed = time.perf_counter() - started
    return workers * burn_seconds / elapsed


@dataclass(frozen=True)
class FlakyOnceDetector:
    """Fails exactly one detect() call per marker directory, then behaves
    like the stub. The marker file makes the fault fire once across
    processes and retries. Presents the stub's identity so its parts are
    byte-identical to a fault-free run."""

    seed: int
    marker_dir: str
    name: str = "stub"
    version: str = "1.0"
    categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))

    def detect(self, image: ImageRecord) -> Sequence[Detection]:
        marker = Path(self.marker_dir) / "failed_once"
        try:
            with open(marker, "x"):
                pass
            raise RuntimeError("injected transient failure")
        except FileExistsError:
            return stub_detect(image, self.seed)


@dataclass(frozen=True)
class FailingImageDetector:
    """Permanently fails on one image id, so its shard exhausts retries."""

    seed: int
    fail_image_id: str
    name: str = "failing-stub"
    version: str = "1.0"
    categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))

    def detect(self, image: ImageRecord) -> Sequence[Detection]:
        if image.id == self.fail_image_id:
            raise RuntimeError(f"injected permanent failure on '{image.id}'")
        return stub_detect(image, self.seed)


@dataclass(frozen=True)
class DieAfterPartsDetector:
    """Kills its worker process (hard exit, no cleanup) once the checkpoint
    holds the given number of completed parts. Used to simulate a crash
    mid-batch for resume tests. Presents the stub's identity so surviving
    parts are byte-identical to an uninterrupted run's."""

    seed: int
    parts_dir: str
    die_after: int
    name: str = "stub"
    version: str = "1.0"
    categories: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))

    def detect(self, image: ImageRecord) -> Sequence[Detection]:
        parts = Path(self.parts_dir)
        if parts.is_dir() and len(list(parts.glob("shard_*.detections"))) >= self.die_after:
            os._exit(17)
        return stub_detect(image, self.seed)
