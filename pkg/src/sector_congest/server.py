"""JSON over HTTP: ``POST /predict``, ``GET /health``, ``POST /train``."""

from __future__ import annotations

import json
import logging
import threading
from datetime import date
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import BadRequest, SectorCongestError
from .gbm import BoostConfig
from .serving import ModelStore, PredictionService, TrainConfig, error_body, train_all_sectors

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


def train_config_from_dict(obj: dict) -> tuple:
    """``(from, to, TrainConfig)`` out of a ``/train`` body."""
    if not isinstance(obj, dict):
        raise BadRequest("request body must be an object")
    try:
        day_from = date.fromisoformat(obj["from"]) if obj.get("from") else None
        day_to = date.fromisoformat(obj["to"]) if obj.get("to") else None
        boost = BoostConfig(
            n_learners=int(obj.get("learners", 400)),
            shrinkage=float(obj.get("shrinkage", 0.1)),
            max_depth=int(obj.get("maxDepth", 4)),
            min_leaf=int(obj.get("minLeaf", 5)),
            line_search=bool(obj.get("lineSearch", False)),
        )
    except (TypeError, ValueError) as exc:
        raise BadRequest(str(exc)) from None
    if boost.n_learners < 0 or not 0 < boost.shrinkage <= 1 or boost.max_depth < 1 or boost.min_leaf < 1:
        raise BadRequest("learners >= 0, 0 < shrinkage <= 1, maxDepth >= 1 and minLeaf >= 1 are required")
    config = TrainConfig(
        boost=boost,
        with_uncertainty=bool(obj.get("withUncertainty", False)),
        use_weather=bool(obj.get("useWeather", True)),
        sectors=obj.get("sectors"),
    )
    return day_from, day_to, config


class TrainingJobs:
    """At most one training run per server; the read path never waits on it."""

    def __init__(self, root):
        self.root = root
        self._lock = threading.Lock()
        self._thread = None
        self.last = None  # summary of the last finished run

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def start(self, day_from, day_to, config) -> bool:
        with self._lock:
            if self.running:
                return False
            self._thread = threading.Thread(target=self._run, args=(day_from, day_to, config), daemon=True)
            self._thread.start()
            return True

    def _run(self, day_from, day_to, config):
        try:
            report = train_all_sectors(self.root, day_from, day_to, config)
            self.last = {
                "days": [d.isoformat() for d in report.days],
                "trained": [r.model_id for r in report.trained],
                "failed": {r.sector: r.error for r in report.sectors if r.error},
                "totalDuration": round(report.total_duration, 3),
            }
        except Exception as exc:  # keep the server alive whatever happens
            log.exception("training run failed")
            self.last = error_body(exc)

    def wait(self, timeout=None):
        t = self._thread
        if t is not None:
            t.join(timeout)


class _Handler(BaseHTTPRequestHandler):
    server_version = "sector-congest/1"

    def log_message(self, fmt, *args):
        log.info("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, obj: dict) -> None:
        body = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> bytes:
        n = int(self.headers.get("Content-Length") or 0)
        if n > MAX_BODY:
            raise BadRequest("request body too large")
        return self.rfile.read(n)

    def do_GET(self):
        if self.path != "/health":
            return self._send(404, error_body(BadRequest(f"no route GET {self.path}")))
        app = self.server.app
        self._send(200, {
            "status": "ok",
            "models": len(app.service.models.sectors()),
            "training": app.jobs.running,
            "lastTraining": app.jobs.last,
        })

    def do_POST(self):
        app = self.server.app
        try:
            body = self._body()
        except (BadRequest, ValueError) as exc:
            return self._send(400, error_body(BadRequest(str(exc))))
        if self.path == "/predict":
            return self._send(*app.service.handle_json(body))
        if self.path == "/train":
            try:
                day_from, day_to, config = train_config_from_dict(json.loads(body or b"{}"))
            except json.JSONDecodeError as exc:
                return self._send(400, error_body(BadRequest(f"body is not JSON: {exc}")))
            except SectorCongestError as exc:
                return self._send(400, error_body(exc))
            if not app.jobs.start(day_from, day_to, config):
                return self._send(409, {"status": "busy", "message": "a training run is in progress"})
            return self._send(202, {"status": "started"})
        self._send(404, error_body(BadRequest(f"no route POST {self.path}")))


class App:
    def __init__(self, root):
        self.root = Path(root)
        self.service = PredictionService(root)
        self.jobs = TrainingJobs(root)


def make_server(root, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _Handler)
    server.daemon_threads = True
    server.app = App(root)
    return server


def serve(root, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(root, host, port)
    log.info("serving %s on http://%s:%d", root, host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


__all__ = ["App", "ModelStore", "TrainingJobs", "make_server", "serve", "train_config_from_dict"]
