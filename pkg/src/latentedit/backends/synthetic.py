"""Deterministic in-process backend used as a test oracle and demo target.

The generator is a lossless codec: a style vector's float32 bytes become the
RGBA pixels of a width-C PNG, so generate/invert are exactly mutually
inverse. Image embeddings are the linear map ``A @ style`` for a fixed
full-column-rank mixing matrix A, which gives closed forms for every
downstream quantity. Text embeddings map known lexicon tokens to the images
of their attribute axes under A; unknown tokens contribute small seeded hash
noise, so outputs are bit-reproducible for equal configs.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DecodeError, DimensionMismatch, UsageError
from .base import (
    ALL_CAPABILITIES,
    Backend,
    BackendDescriptor,
    CAP_EMBED_IMAGE,
    CAP_EMBED_TEXT,
    CAP_GENERATE,
    CAP_INVERT,
)

MIXING_AXIS = "axis"
MIXING_ORTHONORMAL = "orthonormal"
UNKNOWN_TOKEN_SCALE = 0.1


@dataclass(frozen=True, eq=False)
class SyntheticBackendConfig:
    seed: int = 0
    d: int = 32
    C: int = 8
    mixing_mode: str = MIXING_ORTHONORMAL
    mixing_matrix: Optional[np.ndarray] = None
    attribute_lexicon: Dict[str, int] = field(default_factory=dict)
    normalize_embeddings: bool = True
    capabilities: frozenset = ALL_CAPABILITIES
    max_batch: int = 4096

    def __post_init__(self):
        if self.d < 1 or self.C < 1:
            raise UsageError("d and C must be >= 1")
        if self.C > self.d:
            raise UsageError("synthetic backend requires C <= d (full column rank)")
        for token, axis in self.attribute_lexicon.items():
            if not 0 <= axis < self.C:
                raise UsageError(f"lexicon token {token!r} maps to bad axis {axis}")


def _build_mixing(config: SyntheticBackendConfig) -> np.ndarray:
    if config.mixing_matrix is not None:
        A = np.asarray(config.mixing_matrix, dtype=np.float64)
        if A.shape != (config.d, config.C):
            raise DimensionMismatch(
                f"mixing matrix shape {A.shape} != ({config.d}, {config.C})"
            )
        if np.linalg.matrix_rank(A) < config.C:
            raise UsageError("mixing matrix must have full column rank")
        return A
    if config.mixing_mode == MIXING_AXIS:
        A = np.zeros((config.d, config.C))
        A[: config.C, : config.C] = np.eye(config.C)
        return A
    if config.mixing_mode == MIXING_ORTHONORMAL:
        rng = np.random.default_rng(config.seed)
        raw = rng.standard_normal((config.d, config.C))
        q, r = np.linalg.qr(raw)
        # fix the sign convention so the factorization is unique
        q = q * np.sign(np.diag(r))
        return q
    raise UsageError(f"unknown mixing_mode {config.mixing_mode!r}")


def _token_noise(seed: int, token: str, d: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(d)
    return vec / np.linalg.norm(vec)


def _tokenize(text: str) -> List[str]:
    return [t.strip(".,!?;:\"'()") for t in text.lower().split()]


class SyntheticBackend(Backend):
    """See module docstring. All operations are pure functions of
    (config, inputs)."""

    def __init__(self, config: SyntheticBackendConfig = SyntheticBackendConfig()):
        self.config = config
        self.mixing = _build_mixing(config)
        mid = config.C // 2
        offsets = (0, mid, config.C) if 0 < mid < config.C else (0, config.C)
        h = hashlib.sha256()
        h.update(f"synthetic:{config.seed}:{config.d}:{config.C}".encode())
        h.update(self.mixing.astype("<f8").tobytes())
        h.update(repr(sorted(config.attribute_lexicon.items())).encode())
        h.update(f":{config.normalize_embeddings}".encode())
        self._descriptor = BackendDescriptor(
            name=f"synthetic-{config.seed}",
            embed_dim=config.d,
            style_dim=config.C,
            layer_offsets=offsets,
            capabilities=frozenset(config.capabilities),
            fingerprint=h.hexdigest(),
            max_batch=config.max_batch,
        )

    def describe(self) -> BackendDescriptor:
        return self._descriptor

    # -- embedding ----------------------------------------------------------

    def _finish(self, vec: np.ndarray) -> np.ndarray:
        if self.config.normalize_embeddings:
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm
        return vec

    def _embed_text_impl(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.config.d))
        for i, text in enumerate(texts):
            vec = np.zeros(self.config.d)
            tokens = [t for t in _tokenize(text) if t] or [f"<empty:{text}>"]
            for token in tokens:
                axis = self.config.attribute_lexicon.get(token)
                if axis is not None:
                    vec = vec + self.mixing[:, axis]
                else:
                    vec = vec + UNKNOWN_TOKEN_SCALE * _token_noise(
                        self.config.seed, token, self.config.d
                    )
            out[i] = self._finish(vec)
        return out.astype(np.float32)

    def _embed_image_impl(self, images: Sequence[bytes]) -> np.ndarray:
        styles = self._invert_impl(images)
        out = np.zeros((len(images), self.config.d))
        for i, s in enumerate(styles):
            out[i] = self._finish(self.mixing @ s.astype(np.float64))
        return out.astype(np.float32)

    # -- generation / inversion ---------------------------------------------

    def _generate_impl(self, styles: np.ndarray) -> List[bytes]:
        out = []
        for s in styles:
            payload = np.ascontiguousarray(s, dtype="<f4").tobytes()
            img = Image.frombytes("RGBA", (self.config.C, 1), payload)
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            out.append(buf.getvalue())
        return out

    def _invert_impl(self, images: Sequence[bytes]) -> np.ndarray:
        out = np.zeros((len(images), self.config.C), dtype=np.float32)
        for i, data in enumerate(images):
            out[i] = self._decode_style(data)
        return out

    def _decode_style(self, data: bytes) -> np.ndarray:
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise DecodeError(f"not a decodable image: {exc}") from exc
        if img.mode != "RGBA" or img.height != 1 or img.width != self.config.C:
            raise DecodeError(
                f"image is not a {self.config.C}-channel style encoding "
                f"(mode={img.mode}, size={img.size})"
            )
        style = np.frombuffer(img.tobytes(), dtype="<f4")
        if style.shape[0] != self.config.C or not np.all(np.isfinite(style)):
            raise DecodeError("image payload does not decode to a finite style vector")
        return style
