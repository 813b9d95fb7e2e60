"""Reference HTTP server exposing any in-process backend over the wire
protocol.

Endpoints (all POST, JSON bodies):

    /v1/describe     {}                      -> descriptor object
    /v1/embed_text   {"texts": [...]}        -> {"embeddings": [[...], ...]}
    /v1/embed_image  {"images_png_b64": []}  -> {"embeddings": [[...], ...]}
    /v1/generate     {"styles": [[...], ..]} -> {"images_png_b64": [...]}
    /v1/invert       {"images_png_b64": []}  -> {"styles": [[...], ...]}

Floats are serialized as JSON decimals via Python repr (17 significant
digits). Errors come back as ``{"error": {"code", "message"}}`` with status
400 for capability/decode/usage problems and 500 otherwise.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Tuple

import numpy as np

from ..errors import (
    CapabilityMissing,
    DecodeError,
    DimensionMismatch,
    EditEngineError,
    UsageError,
)
from .base import Backend

logger = logging.getLogger(__name__)


def _b64_decode_all(items) -> list:
    try:
        return [base64.b64decode(s) for s in items]
    except (TypeError, ValueError) as exc:
        raise DecodeError(f"bad base64 image payload: {exc}") from exc


def _handle(backend: Backend, route: str, body: dict) -> dict:
    if route == "/v1/describe":
        return backend.describe().to_dict()
    if route == "/v1/embed_text":
        texts = body.get("texts")
        if not isinstance(texts, list):
            raise UsageError('body must carry "texts": [...]')
        return {"embeddings": backend.embed_text(texts).tolist()}
    if route == "/v1/embed_image":
        images = body.get("images_png_b64")
        if not isinstance(images, list):
            raise UsageError('body must carry "images_png_b64": [...]')
        return {"embeddings": backend.embed_image(_b64_decode_all(images)).tolist()}
    if route == "/v1/generate":
        styles = body.get("styles")
        if not isinstance(styles, list):
            raise UsageError('body must carry "styles": [[...], ...]')
        arr = np.asarray(styles, dtype=np.float32)
        if arr.size and arr.ndim != 2:
            raise UsageError("styles must be a list of equal-length rows")
        images = backend.generate(arr if arr.size else np.zeros((0, 1), np.float32))
        return {
            "images_png_b64": [base64.b64encode(i).decode("ascii") for i in images]
        }
    if route == "/v1/invert":
        images = body.get("images_png_b64")
        if not isinstance(images, list):
            raise UsageError('body must carry "images_png_b64": [...]')
        return {"styles": backend.invert(_b64_decode_all(images)).tolist()}
    raise UsageError(f"unknown route {route}")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route through logging, not stderr
        logger.debug("wire: " + fmt, *args)

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length) if length else b"{}"
            body = json.loads(raw.decode("utf-8")) if raw.strip() else {}
            if not isinstance(body, dict):
                raise UsageError("request body must be a JSON object")
            result = _handle(self.server.backend, self.path, body)
            self._reply(200, result)
        except (UsageError, CapabilityMissing, DecodeError, DimensionMismatch) as exc:
            self._reply(400, {"error": {"code": exc.code, "message": str(exc)}})
        except EditEngineError as exc:
            self._reply(500, {"error": {"code": exc.code, "message": str(exc)}})
        except json.JSONDecodeError as exc:
            self._reply(400, {"error": {"code": "usage", "message": f"bad JSON: {exc}"}})
        except Exception as exc:  # noqa: BLE001 - wire boundary
            logger.exception("wire handler failure")
            self._reply(500, {"error": {"code": "backend_failure", "message": str(exc)}})

    def _reply(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class BackendServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.backend = backend

    @property
    def url(self) -> str:
        return f"http://{self.server_address[0]}:{self.server_address[1]}"


def serve_backend(backend: Backend, host: str = "127.0.0.1", port: int = 0) -> BackendServer:
    """Create a server bound to (host, port); port 0 picks a free one."""
    return BackendServer(backend, host, port)


def start_in_thread(backend: Backend, host: str = "127.0.0.1", port: int = 0) -> Tuple[BackendServer, threading.Thread]:
    server = serve_backend(backend, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
