"""HTTP API over a loaded EditEngine: retrieval, editing, sweeps, images.

Error bodies always carry a machine-readable code mirroring the CLI exit
taxonomy: usage problems map to 400, divergent normalization to 409 (the
body names the offending beta), backend/capability failures to 502, and
format/io faults to 500.
"""

from __future__ import annotations

import base64
import binascii
import logging
import re
from pathlib import Path
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .directions import DEFAULT_RETRIEVAL_K, NEUTRAL_DIFF, SVM_NORMAL
from .engine import EditEngine
from .errors import EditEngineError, UsageError
from .mapper import DEFAULT_ALPHA, DEFAULT_BETA, EditRequest, grid_values

logger = logging.getLogger(__name__)

_METHODS = {"svm": SVM_NORMAL, "baseline": NEUTRAL_DIFF, SVM_NORMAL: SVM_NORMAL, NEUTRAL_DIFF: NEUTRAL_DIFF}
_STATUS_BY_EXIT = {2: 400, 3: 409, 4: 502, 5: 500}
_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")


class EditBody(BaseModel):
    text: str
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    method: str = "svm"
    neutral: Optional[str] = None
    k: int = DEFAULT_RETRIEVAL_K
    style: Optional[List[float]] = None
    image_b64: Optional[str] = None


class RetrieveBody(BaseModel):
    text: str
    k: int = DEFAULT_RETRIEVAL_K
    show: int = 16


class GridSpec(BaseModel):
    start: float
    stop: float
    step: float


class SweepBody(BaseModel):
    text: str
    alpha: GridSpec = Field(default=GridSpec(start=2.0, stop=6.0, step=0.5))
    beta: GridSpec = Field(default=GridSpec(start=0.1, stop=0.2, step=0.05))
    method: str = "svm"
    neutral: Optional[str] = None
    k: int = DEFAULT_RETRIEVAL_K
    style: Optional[List[float]] = None
    image_b64: Optional[str] = None


def _edit_request(body, alpha: float, beta: float) -> EditRequest:
    method = _METHODS.get(body.method)
    if method is None:
        raise UsageError(f"unknown method {body.method!r} (use svm | baseline)")
    image = None
    if body.image_b64 is not None:
        try:
            image = base64.b64decode(body.image_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise UsageError(f"image_b64 is not valid base64: {exc}") from exc
    return EditRequest(
        instruction=body.text,
        alpha=alpha,
        beta=beta,
        method=method,
        neutral_text=body.neutral,
        source_style=np.asarray(body.style, dtype=np.float32) if body.style is not None else None,
        source_image=image,
    )


def create_app(
    engine: EditEngine,
    images_dir: Optional[str] = None,
    cors_origins=("*",),
) -> FastAPI:
    app = FastAPI(title="latent-edit service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    images_root = Path(images_dir) if images_dir else None

    @app.exception_handler(EditEngineError)
    async def engine_error(_: Request, exc: EditEngineError):
        payload = {"error": {"code": exc.code, "exit_code": exc.exit_code, "message": str(exc)}}
        if hasattr(exc, "beta"):
            payload["error"]["beta"] = exc.beta
        return JSONResponse(payload, status_code=_STATUS_BY_EXIT.get(exc.exit_code, 500))

    @app.exception_handler(RequestValidationError)
    async def validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse(
            {"error": {"code": "usage", "exit_code": 2, "message": str(exc.errors()[:3])}},
            status_code=400,
        )

    @app.get("/api/health")
    def health():
        desc = engine.backend.describe()
        return {
            "status": "ok",
            "backend": desc.to_dict(),
            "corpus_rows": engine.corpus.n_rows,
            "corpus_fingerprint": engine.corpus.fingerprint,
            "channels_backend_fingerprint": engine.channels.backend_fingerprint,
            "direction_cache": {
                "size": len(engine.cache),
                "hits": engine.cache.hits,
                "misses": engine.cache.misses,
            },
        }

    @app.post("/api/edit")
    def edit(body: EditBody):
        request = _edit_request(body, body.alpha, body.beta)
        result = engine.edit(request, k=body.k)
        prov = result.text_direction.provenance
        return {
            "image_b64": base64.b64encode(result.edited_image).decode("ascii"),
            "support_size": result.applied_direction.support_size,
            "positives": prov.get("positives", []),
            "negatives": prov.get("negatives", []),
            "objective": result.objective,
            "method": result.text_direction.method,
            "alpha": result.alpha,
            "beta": result.applied_direction.beta,
            "edited_style": result.edited_style.tolist(),
        }

    @app.post("/api/retrieve")
    def retrieve(body: RetrieveBody):
        top, bottom = engine.retrieve(body.text, k=body.k)
        show = max(0, body.show)

        def pack(items):
            return [
                {"id": i, "score": s, "thumb_url": f"/api/images/{i}"}
                for i, s in items[:show]
            ]

        return {"positives": pack(top), "negatives": pack(bottom), "k": body.k}

    @app.post("/api/sweep")
    def sweep(body: SweepBody):
        request = _edit_request(body, body.alpha.start, body.beta.start)
        alphas = grid_values(body.alpha.start, body.alpha.stop, body.alpha.step)
        betas = grid_values(body.beta.start, body.beta.stop, body.beta.step)
        result = engine.sweep(request, alphas, betas, k=body.k)
        return {
            "entries": result.as_rows(),
            "best": {
                "alpha": result.best.alpha,
                "beta": result.best.beta,
                "objective": result.best.objective,
            },
        }

    @app.get("/api/images/{image_id}")
    def image(image_id: str):
        if images_root is None or not _SAFE_ID.match(image_id):
            return JSONResponse(
                {"error": {"code": "usage", "exit_code": 2, "message": "unknown image"}},
                status_code=404,
            )
        for candidate in (images_root / image_id, images_root / f"{image_id}.png"):
            if candidate.is_file():
                return Response(candidate.read_bytes(), media_type="image/png")
        return JSONResponse(
            {"error": {"code": "usage", "exit_code": 2, "message": f"no image {image_id!r}"}},
            status_code=404,
        )

    return app
