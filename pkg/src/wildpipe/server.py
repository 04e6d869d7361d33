"""HTTP review service: the sole mutation path for review state.

Serves the confidence-ordered work queue, records verdicts into the
append-only log, exposes repeat-detection clusters for adjudication, and
exports the verified classifier manifest. Reads come straight from
derived state; writes funnel through the verdict log's serialized,
durable append. Cluster adjudications are appended to a resolutions log
and the plain-text allowlist file (one cluster id per line, the same
format the rde stage consumes) is rewritten atomically on every change.
"""

from __future__ import annotations

import json
import mimetypes
import os
import threading
from pathlib import Path
from typing import Any, Sequence

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel

from .canonical import write_bytes_atomic
from .coco_ct import Dataset
from .crops import serialize_manifest
from .detection import DetectionsFile
from .rde import SuspiciousCluster
from .review import PENDING, ReviewError, VerdictLog, build_queue, export_verified

ALLOWLISTED = "allowlisted"
SUPPRESS = "suppress"


class ReviewStore:
    """Everything the endpoints need, plus adjudication persistence."""

    def __init__(
        self,
        dataset: Dataset,
        results: DetectionsFile,
        log: VerdictLog,
        clusters: Sequence[SuspiciousCluster] = (),
        media_root: Path | str | None = None,
        resolutions_path: Path | str | None = None,
        allowlist_path: Path | str | None = None,
    ):
        self.dataset = dataset
        self.results = results
        self.log = log
        self.clusters = {c.cluster_id: c for c in clusters}
        self.media_root = Path(media_root).resolve() if media_root else None
        self.resolutions_path = Path(resolutions_path) if resolutions_path else None
        self.allowlist_path = Path(allowlist_path) if allowlist_path else None
        self.image_id_of = {r.file_name: r.id for r in dataset.images}
        self._cluster_lock = threading.Lock()
        self.resolutions: dict[str, str] = {}
        if self.resolutions_path and self.resolutions_path.exists():
            for line in self.resolutions_path.read_text(encoding="utf-8").split("\n")[:-1]:
                if line.strip():
                    event = json.loads(line)
                    self.resolutions[event["cluster_id"]] = event["decision"]

    def queue(self, band_lo: float, band_hi: float, order: str,
              offset: int, limit: int) -> dict[str, Any]:
        items = build_queue(self.results, [band_lo, band_hi], order=order,
                            image_id_of=self.image_id_of,
                            reviewed=self.log.state.reviewed_images)
        page = items[offset:offset + limit]
        return {"total": len(items), "offset": offset, "limit": limit,
                "items": [item.to_json() for item in page]}

    def cluster_status(self, cluster_id: str) -> str:
        return self.resolutions.get(cluster_id, PENDING)

    def resolve_cluster(self, cluster_id: str, allowlisted: bool) -> dict[str, Any]:
        if cluster_id not in self.clusters:
            raise KeyError(cluster_id)
        decision = ALLOWLISTED if allowlisted else SUPPRESS
        with self._cluster_lock:
            if self.resolutions_path:
                with open(self.resolutions_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"cluster_id": cluster_id, "decision": decision},
                                        sort_keys=True) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self.resolutions[cluster_id] = decision
            if self.allowlist_path:
                allow = sorted(cid for cid, d in self.resolutions.items() if d == ALLOWLISTED)
                write_bytes_atomic(self.allowlist_path,
                                   "".join(f"{cid}\n" for cid in allow).encode("utf-8"))
        return {"cluster_id": cluster_id, "status": decision}


class VerdictIn(BaseModel):
    image_id: str
    decision: str
    detection_index: int | None = None
    species: str | None = None
    reviewer: str = ""


def create_app(store: ReviewStore, ui_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="wildpipe review service")

    @app.get("/api/queue")
    def get_queue(
        band_lo: float = Query(0.0, ge=0.0, le=1.0),
        band_hi: float = Query(1.0, ge=0.0, le=1.0),
        order: str = Query("desc"),
        offset: int = Query(0, ge=0),
        limit: int = Query(50, ge=1, le=1000),
    ) -> dict[str, Any]:
        try:
            return store.queue(band_lo, band_hi, order, offset, limit)
        except ReviewError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/api/images/{image_id:path}")
    def get_image(image_id: str) -> dict[str, Any]:
        record = store.dataset.images_by_id.get(image_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown image id '{image_id}'")
        im = store.results.by_file.get(record.file_name)
        verdicts = [v.to_json() for (iid, _), v in sorted(
            store.log.state.by_target.items(),
            key=lambda kv: kv[1].verdict_id) if iid == image_id]
        return {
            "image_id": image_id,
            "file": record.file_name,
            "width": record.width,
            "height": record.height,
            "location": record.location,
            "max_detection_conf": im.max_detection_conf if im else 0.0,
            "detections": [d.to_json() for d in im.detections] if im else [],
            "status": "reviewed" if image_id in store.log.state.reviewed_images else PENDING,
            "verdicts": verdicts,
            "species_labels": sorted(store.dataset.species_of(image_id)),
        }

    @app.post("/api/verdicts")
    def post_verdict(body: VerdictIn) -> dict[str, Any]:
        try:
            verdict = store.log.append(
                image_id=body.image_id,
                decision=body.decision,
                detection_index=body.detection_index,
                species=body.species,
                reviewer=body.reviewer,
            )
        except ReviewError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return verdict.to_json()

    @app.get("/api/clusters")
    def get_clusters() -> dict[str, Any]:
        clusters = []
        for cluster_id in sorted(store.clusters):
            doc = store.clusters[cluster_id].to_json()
            doc["status"] = store.cluster_status(cluster_id)
            clusters.append(doc)
        return {"clusters": clusters}

    @app.post("/api/clusters/{cluster_id:path}/allowlist")
    def post_allowlist(cluster_id: str, body: dict[str, Any] | None = None) -> dict[str, Any]:
        allowlisted = True if body is None else bool(body.get("allowlisted", True))
        try:
            return store.resolve_cluster(cluster_id, allowlisted)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown cluster '{cluster_id}'")

    @app.get("/api/export/manifest")
    def get_manifest() -> Response:
        manifest = export_verified(store.log.state, store.results, store.dataset)
        return Response(content=serialize_manifest(manifest), media_type="application/json")

    @app.get("/api/categories")
    def get_categories() -> dict[str, Any]:
        return {"categories": [{"id": c.id, "name": c.name} for c in store.dataset.categories]}

    @app.get("/media/{file:path}")
    def get_media(file: str) -> FileResponse:
        if store.media_root is None:
            raise HTTPException(status_code=404, detail="no media root configured")
        target = (store.media_root / file).resolve()
        if not target.is_relative_to(store.media_root) or not target.is_file():
            raise HTTPException(status_code=404, detail=f"no such media file '{file}'")
        media_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return FileResponse(target, media_type=media_type)

    if ui_dir is not None:
        ui_path = Path(ui_dir)
        if ui_path.is_dir():
            from fastapi.staticfiles import StaticFiles

            app.mount("/", StaticFiles(directory=ui_path, html=True), name="ui")

    return app


def serve(store: ReviewStore, host: str = "127.0.0.1", port: int = 8008,
          ui_dir: Path | str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(store, ui_dir=ui_dir), host=host, port=port, log_level="info")
