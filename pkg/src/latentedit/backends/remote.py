"""HTTP client for the backend wire protocol.

All protocol calls are pure, so failed connections and 5xx responses are
retried with bounded exponential backoff. Dimension checks run client-side
against the served descriptor: a remote that answers with the wrong shape
surfaces as DimensionMismatch, not silent corruption.
"""

from __future__ import annotations

import base64
import logging
import time
from typing import List, Optional, Sequence

import numpy as np
import requests

from ..errors import (
    BackendFailure,
    CapabilityMissing,
    DecodeError,
    DimensionMismatch,
)
from .base import Backend, BackendDescriptor

logger = logging.getLogger(__name__)

_ERROR_CLASSES = {
    "capability_missing": CapabilityMissing,
    "inversion_unsupported": CapabilityMissing,
    "decode_error": DecodeError,
    "dimension_mismatch": DimensionMismatch,
}


class RemoteBackend(Backend):
    def __init__(
        self,
        url: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.1,
        session: Optional[requests.Session] = None,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = max(1, retries)
        self.backoff = backoff
        self._session = session or requests.Session()
        self._descriptor: Optional[BackendDescriptor] = None

    def _post(self, route: str, payload: dict) -> dict:
        last_exc: Optional[Exception] = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(
                    f"{self.url}{route}", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_exc = exc
                logger.debug("wire call %s failed (attempt %d): %s", route, attempt, exc)
                continue
            if resp.status_code >= 500:
                last_exc = BackendFailure(
                    f"{route} -> {resp.status_code}: {resp.text[:200]}"
                )
                continue
            return self._parse(route, resp)
        raise BackendFailure(f"{route} failed after {self.retries} attempts: {last_exc}")

    def _parse(self, route: str, resp: requests.Response) -> dict:
        try:
            body = resp.json()
        except ValueError as exc:
            raise BackendFailure(f"{route}: non-JSON response") from exc
        if resp.status_code != 200:
            err = body.get("error", {}) if isinstance(body, dict) else {}
            cls = _ERROR_CLASSES.get(err.get("code"), BackendFailure)
            raise cls(err.get("message", f"{route} -> {resp.status_code}"))
        if not isinstance(body, dict):
            raise BackendFailure(f"{route}: response is not an object")
        return body

    # -- Backend interface ---------------------------------------------------

    def describe(self) -> BackendDescriptor:
        if self._descriptor is None:
            self._descriptor = BackendDescriptor.from_dict(self._post("/v1/describe", {}))
        return self._descriptor

    def _embed_text_impl(self, texts: Sequence[str]) -> np.ndarray:
        body = self._post("/v1/embed_text", {"texts": list(texts)})
        return self._embedding_matrix(body, len(texts))

    def _embed_image_impl(self, images: Sequence[bytes]) -> np.ndarray:
        body = self._post(
            "/v1/embed_image",
            {"images_png_b64": [base64.b64encode(i).decode("ascii") for i in images]},
        )
        return self._embedding_matrix(body, len(images))

    def _generate_impl(self, styles: np.ndarray) -> List[bytes]:
        body = self._post("/v1/generate", {"styles": styles.tolist()})
        items = body.get("images_png_b64")
        if not isinstance(items, list):
            raise BackendFailure("generate: response missing images_png_b64")
        try:
            return [base64.b64decode(s) for s in items]
        except (TypeError, ValueError) as exc:
            raise BackendFailure(f"generate: bad base64 in response: {exc}") from exc

    def _invert_impl(self, images: Sequence[bytes]) -> np.ndarray:
        body = self._post(
            "/v1/invert",
            {"images_png_b64": [base64.b64encode(i).decode("ascii") for i in images]},
        )
        styles = body.get("styles")
        if not isinstance(styles, list):
            raise BackendFailure("invert: response missing styles")
        arr = np.asarray(styles, dtype=np.float32)
        return arr

    def _embedding_matrix(self, body: dict, n: int) -> np.ndarray:
        rows = body.get("embeddings")
        if not isinstance(rows, list):
            raise BackendFailure("response missing embeddings")
        try:
            arr = np.asarray(rows, dtype=np.float32)
        except ValueError as exc:
            raise BackendFailure(f"ragged embedding matrix: {exc}") from exc
        d = self.describe().embed_dim
        if arr.ndim != 2 or arr.shape != (n, d):
            raise DimensionMismatch(
                f"remote returned embeddings of shape {arr.shape}, expected ({n}, {d})"
            )
        return arr
