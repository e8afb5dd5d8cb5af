"""HTTP screening service: POST /api/v1/predict scores an uploaded handwriting
image with the full preprocessing chain, GET /api/v1/health reports liveness.

The model is loaded once before the socket binds and never mutated; eval-mode
inference allocates per-request buffers only, so requests run concurrently.
Uploads are processed in memory and discarded: nothing is written to disk.
"""

from __future__ import annotations

import json
import logging
import signal
import threading
import time
import uuid
from dataclasses import dataclass, field
from email.parser import BytesParser
from email.policy import default as default_email_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import (
    BadConfig,
    BindFailure,
    LoopscreenError,
    ModelLoadFailure,
    NoInk,
    TargetTooSmall,
    UnreadableFile,
    UnsupportedFormat,
)
from .imaging import PreprocessConfig, decode_image, preprocess
from .models import Model, load as load_model, predict

logger = logging.getLogger(__name__)

API_PREDICT = "/api/v1/predict"
API_HEALTH = "/api/v1/health"


@dataclass
class ServiceConfig:
    model_path: str
    host: str = "127.0.0.1"
    port: int = 8571
    max_upload_bytes: int = 5 * 1024 * 1024
    request_timeout: float = 30.0
    allow_origin: str = "*"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise BadConfig(f"port must be in (0, 65536), got {self.port}")
        if self.max_upload_bytes <= 0:
            raise BadConfig("max_upload_bytes must be > 0")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> "ScreeningService":
        return self.server.service

    def setup(self):
        # per-connection socket timeout; BaseHTTPRequestHandler reads it in setup
        self.timeout = self.server.service.cfg.request_timeout
        super().setup()

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)

    # -- response plumbing ---------------------------------------------------

    def _send_json(self, status: int, payload: dict, close: bool = False) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", self.service.cfg.allow_origin)
        if close:
            self.send_header("Connection", "close")
            self.close_connection = True
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, code: str, message: str, **extra) -> None:
        self._send_json(status, {"error": code, "message": message, **extra},
                        close=status == 413)

    # -- routes ----------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", self.service.cfg.allow_origin)
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        if self.path.split("?")[0] != API_HEALTH:
            self._send_error_json(404, "not_found", f"no route {self.path}")
            return
        svc = self.service
        self._send_json(200, {
            "status": "ok",
            "model_arch": svc.model.arch,
            "model_checksum": f"{svc.model_checksum:08x}",
            "uptime_seconds": time.time() - svc.started_at,
        })

    def do_POST(self):
        if self.path.split("?")[0] != API_PREDICT:
            self._send_error_json(404, "not_found", f"no route {self.path}")
            return
        try:
            self._handle_predict()
        except LoopscreenError as exc:
            # Anything not mapped explicitly below is still a client-side issue.
            self._send_error_json(400, exc.code, str(exc))
        except Exception:
            incident = uuid.uuid4().hex[:12]
            logger.exception("predict failed (incident %s)", incident)
            self._send_error_json(500, "internal_error",
                                  "internal error; reference id attached",
                                  incident_id=incident)

    def _handle_predict(self):
        svc = self.service
        length_header = self.headers.get("Content-Length")
        if length_header is None or not length_header.isdigit():
            self._send_error_json(400, "missing_content_length",
                                  "Content-Length header required")
            return
        length = int(length_header)
        if length > svc.cfg.max_upload_bytes:
            self._send_error_json(
                413, "payload_too_large",
                f"upload exceeds {svc.cfg.max_upload_bytes} bytes")
            return
        content_type = self.headers.get("Content-Type", "")
        if not content_type.lower().startswith("multipart/form-data"):
            self._send_error_json(
                415, "unsupported_media_type",
                "expected multipart/form-data with an 'image' field")
            return
        body = self.rfile.read(length)
        image_bytes = _extract_image_field(content_type, body)
        if image_bytes is None:
            self._send_error_json(422, "missing_image_field",
                                  "multipart body lacks an 'image' file field")
            return
        try:
            raw = decode_image(image_bytes)
        except (UnreadableFile, UnsupportedFormat) as exc:
            self._send_error_json(400, "undecodable_image", str(exc))
            return
        try:
            prepared = preprocess(raw, svc.cfg.preprocess)
        except NoInk as exc:
            self._send_error_json(400, "no_ink", str(exc))
            return
        except TargetTooSmall as exc:
            self._send_error_json(400, "content_too_large", str(exc))
            return
        result = predict(svc.model, prepared)
        self._send_json(200, {
            "probability_patient": result.p_patient,
            "label": result.label,
            "model_arch": svc.model.arch,
            "model_checksum": f"{svc.model_checksum:08x}",
            "preprocess_echo": svc.cfg.preprocess.to_kv(),
        })


def _extract_image_field(content_type: str, body: bytes) -> bytes | None:
    header = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode("latin-1")
    message = BytesParser(policy=default_email_policy).parsebytes(header + body)
    if not message.is_multipart():
        return None
    for part in message.iter_parts():
        disposition = part.get("Content-Disposition", "")
        if part.get_param("name", header="Content-Disposition") == "image" and disposition:
            return part.get_payload(decode=True)
    return None


class ScreeningService:
    """Owns the model, the config, and the threaded HTTP server."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        try:
            self.model: Model = load_model(cfg.model_path)
        except (LoopscreenError, OSError) as exc:
            raise ModelLoadFailure(f"cannot load model {cfg.model_path}: {exc}") from exc
        self.model_checksum = self.model.file_crc
        self.started_at = time.time()
        self._server: ThreadingHTTPServer | None = None

    def start(self) -> None:
        """Bind the socket; raises BindFailure without partial state."""
        try:
            server = ThreadingHTTPServer((self.cfg.host, self.cfg.port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {self.cfg.host}:{self.cfg.port}: {exc}") from exc
        server.service = self
        self._server = server
        self.started_at = time.time()

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        """Stop accepting connections and wait for in-flight requests."""
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None


def serve(cfg: ServiceConfig) -> None:
    """Blocking entry point: load model, bind, run until SIGINT/SIGTERM."""
    service = ScreeningService(cfg)
    service.start()

    def _stop(signum, frame):
        threading.Thread(target=service.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    logger.info("screening service on http://%s:%d", cfg.host, service.port)
    print(f"screening service listening on http://{cfg.host}:{service.port}", flush=True)
    try:
        service.serve_forever()
    finally:
        service.shutdown()
