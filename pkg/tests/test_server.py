"""Review service HTTP API."""

from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from wildpipe.detection import serialize_detections
from wildpipe.rde import RdeConfig, apply_suppression, find_suspicious_clusters, load_allowlist
from wildpipe.review import VerdictLog
from wildpipe.server import ReviewStore, create_app

from conftest import make_dataset, make_results
from test_rde import planted_fixture


@pytest.fixture
def env(tmp_path):
    ds = make_dataset(8, labeled={0: "deer", 1: "elk", 2: "deer"})
    confs = {
        ds.images[0].file_name: [0.95, 0.2],
        ds.images[1].file_name: [0.7],
        ds.images[2].file_name: [0.45],
        ds.images[3].file_name: [],
    }
    results = make_results(confs)
    log = VerdictLog(tmp_path / "verdicts.log", dataset=ds, results=results)
    store = ReviewStore(dataset=ds, results=results, log=log,
                        media_root=tmp_path / "media",
                        resolutions_path=tmp_path / "resolutions.jsonl",
                        allowlist_path=tmp_path / "allowlist.txt")
    return ds, results, store, TestClient(create_app(store)), tmp_path


class TestQueue:
    def test_descending_page(self, env):
        ds, results, store, client, _ = env
        body = client.get("/api/queue", params={"order": "desc"}).json()
        confs = [item["max_conf"] for item in body["items"]]
        assert confs == sorted(confs, reverse=True)
        assert body["total"] == 4  # queue covers the detector results

    def test_band_filter(self, env):
        ds, results, store, client, _ = env
        body = client.get("/api/queue", params={"band_lo": 0.4, "band_hi": 0.8}).json()
        files = {item["file"] for item in body["items"]}
        assert files == {ds.images[1].file_name, ds.images[2].file_name}

    def test_pagination_stable(self, env):
        ds, results, store, client, _ = env
        first = client.get("/api/queue", params={"offset": 0, "limit": 3}).json()["items"]
        again = client.get("/api/queue", params={"offset": 0, "limit": 3}).json()["items"]
        assert first == again
        second = client.get("/api/queue", params={"offset": 3, "limit": 3}).json()["items"]
        ids = [i["image_id"] for i in first + second]
        assert len(ids) == len(set(ids))

    def test_bad_order_is_400(self, env):
        ds, results, store, client, _ = env
        assert client.get("/api/queue", params={"order": "sideways"}).status_code == 400


class TestImagesAndVerdicts:
    def test_get_image_detail(self, env):
        ds, results, store, client, _ = env
        body = client.get("/api/images/img000000").json()
        assert body["file"] == ds.images[0].file_name
        assert body["max_detection_conf"] == 0.95
        assert len(body["detections"]) == 2
        assert body["status"] == "pending"
        assert body["species_labels"] == ["deer"]

    def test_unknown_image_404(self, env):
        ds, results, store, client, _ = env
        assert client.get("/api/images/nope").status_code == 404

    def test_verdict_roundtrip_marks_reviewed(self, env):
        ds, results, store, client, _ = env
        response = client.post("/api/verdicts", json={
            "image_id": "img000000", "decision": "confirm", "detection_index": 0,
            "reviewer": "rt"})
        assert response.status_code == 200
        stored = response.json()
        assert stored["verdict_id"] == 1
        assert stored["at"]
        assert client.get("/api/images/img000000").json()["status"] == "reviewed"

    def test_invalid_verdict_rejected_400(self, env):
        ds, results, store, client, _ = env
        response = client.post("/api/verdicts", json={
            "image_id": "img000000", "decision": "relabel",
            "detection_index": 0, "species": "unicorn"})
        assert response.status_code == 400
        assert "unicorn" in response.json()["detail"]
        assert store.log.state.count == 0

    def test_export_manifest_endpoint(self, env):
        ds, results, store, client, _ = env
        client.post("/api/verdicts", json={
            "image_id": "img000000", "decision": "confirm", "detection_index": 0})
        body = json.loads(client.get("/api/export/manifest").text)
        assert len(body["entries"]) == 1
        assert body["entries"][0]["species"] == "deer"

    def test_categories_served(self, env):
        ds, results, store, client, _ = env
        names = [c["name"] for c in client.get("/api/categories").json()["categories"]]
        assert names == ["empty", "deer", "elk"]


class TestMedia:
    def test_media_served(self, env):
        ds, results, store, client, tmp = env
        target = tmp / "media" / ds.images[0].file_name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(b"fakejpegbytes")
        response = client.get(f"/media/{ds.images[0].file_name}")
        assert response.status_code == 200
        assert response.content == b"fakejpegbytes"

    def test_traversal_blocked(self, env):
        ds, results, store, client, tmp = env
        (tmp / "secret.txt").write_text("nope")
        response = client.get("/media/../secret.txt")
        assert response.status_code in (404, 400)

    def test_missing_file_404(self, env):
        ds, results, store, client, _ = env
        assert client.get("/media/absent.jpg").status_code == 404


class TestClusterAdjudication:
    @pytest.fixture
    def cluster_env(self, tmp_path):
        ds, results = planted_fixture(20)
        config = RdeConfig(0.85, 10)
        clusters = find_suspicious_clusters(results, ds, config)
        assert len(clusters) == 1
        log = VerdictLog(tmp_path / "verdicts.log", dataset=ds, results=results)
        store = ReviewStore(dataset=ds, results=results, log=log, clusters=clusters,
                            resolutions_path=tmp_path / "resolutions.jsonl",
                            allowlist_path=tmp_path / "allowlist.txt")
        return ds, results, clusters, store, TestClient(create_app(store)), tmp_path

    def test_clusters_listed_with_status(self, cluster_env):
        ds, results, clusters, store, client, _ = cluster_env
        body = client.get("/api/clusters").json()
        assert len(body["clusters"]) == 1
        assert body["clusters"][0]["status"] == "pending"
        assert body["clusters"][0]["distinct_image_count"] == 20

    def test_allowlist_roundtrip_survives_rde_rerun(self, cluster_env):
        ds, results, clusters, store, client, tmp = cluster_env
        cid = clusters[0].cluster_id
        response = client.post(f"/api/clusters/{cid}/allowlist", json={"allowlisted": True})
        assert response.status_code == 200
        assert client.get("/api/clusters").json()["clusters"][0]["status"] == "allowlisted"

        # the allowlist file now protects the cluster in a fresh rde run
        allow = load_allowlist(tmp / "allowlist.txt")
        assert allow == {cid}
        reclusters = find_suspicious_clusters(results, ds, RdeConfig(0.85, 10))
        out, report = apply_suppression(results, reclusters, allow)
        assert serialize_detections(out) == serialize_detections(results)
        assert report.detections_suppressed == 0

    def test_suppress_decision_resolves_without_allowlisting(self, cluster_env):
        ds, results, clusters, store, client, tmp = cluster_env
        cid = clusters[0].cluster_id
        client.post(f"/api/clusters/{cid}/allowlist", json={"allowlisted": False})
        assert client.get("/api/clusters").json()["clusters"][0]["status"] == "suppress"
        assert load_allowlist(tmp / "allowlist.txt") == set()

    def test_unknown_cluster_404(self, cluster_env):
        ds, results, clusters, store, client, _ = cluster_env
        assert client.post("/api/clusters/ghost/allowlist", json={}).status_code == 404

    def test_resolutions_replayed_on_restart(self, cluster_env, tmp_path):
        ds, results, clusters, store, client, tmp = cluster_env
        cid = clusters[0].cluster_id
        client.post(f"/api/clusters/{cid}/allowlist", json={"allowlisted": True})
        log2 = VerdictLog(tmp / "verdicts2.log", dataset=ds, results=results)
        store2 = ReviewStore(dataset=ds, results=results, log=log2, clusters=clusters,
                             resolutions_path=tmp / "resolutions.jsonl",
                             allowlist_path=tmp / "allowlist.txt")
        assert store2.cluster_status(cid) == "allowlisted"
