"""HTTP service for human preference labeling.

Serves exported queries one at a time as trajectory polylines plus room
geometry, collects left/right/tie/skip labels (each query labeled at most
once), reports progress, and exports the label file that import-labels
consumes. Also serves the static labeling UI bundle.
"""

from __future__ import annotations

import json
import mimetypes
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import envs
from . import preference as pref

VALID_CHOICES = ("1", "2", "tie", "skip")


def segment_polyline(seg: pref.Segment) -> list[list[float]]:
    """Positions along the segment: the last two state dims per step."""
    pts = np.asarray(seg.states, dtype=np.float64)[:, -2:]
    return [[float(x), float(y)] for x, y in pts]


class FeedbackSession:
    """Label-collection state: cursor, labels, skips; single-writer lock."""

    def __init__(self, queries: list[pref.QueryPair], env_cfg: envs.Nav2dConfig, export_path):
        self.queries = queries
        self.env_cfg = env_cfg
        self.export_path = export_path
        self.labels: dict[str, str] = {}
        self.order = [q.id for q in queries]
        self.by_id = {q.id: q for q in queries}
        self.lock = threading.Lock()

    def next_unlabeled(self) -> pref.QueryPair | None:
        with self.lock:
            for qid in self.order:
                if qid not in self.labels:
                    return self.by_id[qid]
        return None

    def submit(self, qid: str, choice: str) -> int:
        """HTTP status for this label attempt (204 ok, 404/409 otherwise)."""
        if choice not in VALID_CHOICES:
            return 400
        with self.lock:
            if qid not in self.by_id:
                return 404
            if qid in self.labels:
                return 409
            self.labels[qid] = choice
        return 204

    def progress(self) -> dict:
        with self.lock:
            labeled = sum(1 for c in self.labels.values() if c != "skip")
            skipped = sum(1 for c in self.labels.values() if c == "skip")
            return {
                "labeled": labeled,
                "skipped": skipped,
                "remaining": len(self.order) - labeled - skipped,
            }

    def export(self) -> tuple[str, int]:
        with self.lock:
            records = [{"id": qid, "choice": self.labels[qid]} for qid in self.order if qid in self.labels]
        with open(self.export_path, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
        return str(self.export_path), len(records)

    def geometry(self) -> dict:
        return {
            "room_radius": self.env_cfg.room_radius,
            "hazards": [[hz.center[0], hz.center[1], hz.radius] for hz in self.env_cfg.hazards],
        }


def make_handler(session: FeedbackSession, ui_dir):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass  # quiet by default

        def _json(self, code: int, payload) -> None:
            body = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _empty(self, code: int) -> None:
            self.send_response(code)
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/queries/next":
                q = session.next_unlabeled()
                if q is None:
                    self._empty(204)
                    return
                self._json(
                    200,
                    {
                        "id": q.id,
                        "seg1": segment_polyline(q.seg1),
                        "seg2": segment_polyline(q.seg2),
                        "geometry": session.geometry(),
                    },
                )
            elif self.path == "/api/progress":
                self._json(200, session.progress())
            else:
                self._serve_static()

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length) if length else b"{}"
            if self.path == "/api/labels":
                try:
                    rec = json.loads(body)
                    qid, choice = str(rec["id"]), str(rec["choice"])
                except (json.JSONDecodeError, KeyError):
                    self._empty(400)
                    return
                self._empty(session.submit(qid, choice))
            elif self.path == "/api/export":
                path, count = session.export()
                self._json(200, {"path": path, "count": count})
            else:
                self._empty(404)

        def _serve_static(self):
            if ui_dir is None:
                self._empty(404)
                return
            rel = self.path.lstrip("/") or "index.html"
            target = os.path.normpath(os.path.join(ui_dir, rel))
            if not target.startswith(os.path.normpath(ui_dir)) or not os.path.isfile(target):
                self._empty(404)
                return
            ctype = mimetypes.guess_type(target)[0] or "application/octet-stream"
            with open(target, "rb") as f:
                data = f.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


def serve_feedback(
    queries_path,
    port: int,
    export_path=None,
    env_cfg: envs.Nav2dConfig | None = None,
    ui_dir=None,
) -> ThreadingHTTPServer:
    """Build the server (caller runs serve_forever, possibly in a thread)."""
    queries = pref.load_queries(queries_path)
    if export_path is None:
        export_path = str(queries_path) + ".labels.jsonl"
    session = FeedbackSession(queries, env_cfg or envs.Nav2dConfig(), export_path)
    server = ThreadingHTTPServer(("127.0.0.1", port), make_handler(session, ui_dir))
    server.session = session
    return server
