import json
import threading

import httpx
import numpy as np
import pytest

from hasd import envs
from hasd import preference as pref
from hasd import service


@pytest.fixture
def server(tmp_path):
    rng = np.random.default_rng(0)
    store = pref.EpisodeStore()
    for _ in range(3):
        positions = np.cumsum(rng.uniform(-0.1, 0.1, size=(31, 2)), axis=0)
        store.add(positions[:-1], rng.uniform(-1, 1, size=(30, 2)),
                  rng.normal(size=30), positions)
    pairs = pref.sample_queries(store, 10, 5, rng)
    qfile = tmp_path / "queries.jsonl"
    pref.export_queries(pairs, qfile)
    srv = service.serve_feedback(qfile, port=0, export_path=tmp_path / "labels.jsonl")
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    yield base, srv, tmp_path
    srv.shutdown()
    srv.server_close()


class TestEndpoints:
    def test_next_returns_polylines_and_geometry(self, server):
        base, _, _ = server
        r = httpx.get(f"{base}/api/queries/next")
        assert r.status_code == 200
        body = r.json()
        assert len(body["seg1"]) == 10
        assert len(body["seg2"]) == 10
        assert body["geometry"]["room_radius"] == 4.0
        assert len(body["geometry"]["hazards"]) == 4

    def test_label_then_progress(self, server):
        base, _, _ = server
        qid = httpx.get(f"{base}/api/queries/next").json()["id"]
        r = httpx.post(f"{base}/api/labels", json={"id": qid, "choice": "1"})
        assert r.status_code == 204
        progress = httpx.get(f"{base}/api/progress").json()
        assert progress == {"labeled": 1, "skipped": 0, "remaining": 4}

    def test_double_label_is_409(self, server):
        base, _, _ = server
        qid = httpx.get(f"{base}/api/queries/next").json()["id"]
        assert httpx.post(f"{base}/api/labels", json={"id": qid, "choice": "1"}).status_code == 204
        assert httpx.post(f"{base}/api/labels", json={"id": qid, "choice": "2"}).status_code == 409

    def test_unknown_id_is_404(self, server):
        base, _, _ = server
        assert httpx.post(f"{base}/api/labels", json={"id": "zz", "choice": "1"}).status_code == 404

    def test_bad_choice_is_400(self, server):
        base, _, _ = server
        qid = httpx.get(f"{base}/api/queries/next").json()["id"]
        assert httpx.post(f"{base}/api/labels", json={"id": qid, "choice": "left"}).status_code == 400

    def test_exhausted_queue_gives_204(self, server):
        base, _, _ = server
        for _ in range(5):
            qid = httpx.get(f"{base}/api/queries/next").json()["id"]
            httpx.post(f"{base}/api/labels", json={"id": qid, "choice": "skip"})
        r = httpx.get(f"{base}/api/queries/next")
        assert r.status_code == 204

    def test_full_label_flow_export_then_import(self, server):
        base, srv, tmp_path = server
        choices = ["1", "2", "tie", "skip", "1"]
        for choice in choices:
            qid = httpx.get(f"{base}/api/queries/next").json()["id"]
            httpx.post(f"{base}/api/labels", json={"id": qid, "choice": choice})
        r = httpx.post(f"{base}/api/export")
        assert r.status_code == 200
        path, count = r.json()["path"], r.json()["count"]
        assert count == 5
        queries = pref.load_queries(tmp_path / "queries.jsonl")
        buf = pref.PreferenceBuffer()
        imported = pref.import_human_labels(buf, queries, path)
        assert imported == 4  # the skip stays out of the buffer
        assert all(p.source == "human" for p in buf.pairs())

    def test_concurrent_labeling_never_double_counts(self, server):
        base, _, _ = server
        qid = httpx.get(f"{base}/api/queries/next").json()["id"]
        results = []

        def worker(choice):
            results.append(
                httpx.post(f"{base}/api/labels", json={"id": qid, "choice": choice}).status_code
            )

        threads = [threading.Thread(target=worker, args=(c,)) for c in ("1", "2", "tie")]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == [204, 409, 409]
        progress = httpx.get(f"{base}/api/progress").json()
        assert progress["labeled"] + progress["skipped"] == 1


class TestStaticUi:
    def test_serves_ui_bundle(self, tmp_path):
        rng = np.random.default_rng(1)
        store = pref.EpisodeStore()
        positions = np.cumsum(rng.uniform(-0.1, 0.1, size=(31, 2)), axis=0)
        store.add(positions[:-1], rng.uniform(-1, 1, size=(30, 2)), rng.normal(size=30), positions)
        pairs = pref.sample_queries(store, 10, 1, rng)
        qfile = tmp_path / "q.jsonl"
        pref.export_queries(pairs, qfile)
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>labeler</body></html>")
        srv = service.serve_feedback(qfile, port=0, ui_dir=ui)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{srv.server_address[1]}"
        try:
            assert "labeler" in httpx.get(f"{base}/").text
            assert httpx.get(f"{base}/../etc/passwd").status_code == 404
        finally:
            srv.shutdown()
            srv.server_close()
