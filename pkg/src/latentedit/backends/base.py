"""Capability-based backend interface.

A backend provides up to four model roles behind one surface: text
embedding, image embedding, style-conditioned generation, and inversion of
images back to style vectors. Callers must consult ``describe()`` for
dimensions and capabilities; every public entry point gates on the
capability set and short-circuits empty batches without touching the
concrete implementation.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import BackendFailure, CapabilityMissing, DimensionMismatch

CAP_EMBED_TEXT = "embed_text"
CAP_EMBED_IMAGE = "embed_image"
CAP_GENERATE = "generate"
CAP_INVERT = "invert"
ALL_CAPABILITIES = frozenset((CAP_EMBED_TEXT, CAP_EMBED_IMAGE, CAP_GENERATE, CAP_INVERT))


@dataclass(frozen=True)
class BackendDescriptor:
    """Static facts about a backend: dimensions, capabilities, identity."""

    name: str
    embed_dim: int
    style_dim: int
    layer_offsets: Tuple[int, ...]
    capabilities: frozenset
    fingerprint: str
    max_batch: int = 1024

    def __post_init__(self):
        if self.embed_dim < 1 or self.style_dim < 1:
            raise ValueError("embed_dim and style_dim must be >= 1")
        unknown = set(self.capabilities) - ALL_CAPABILITIES
        if unknown:
            raise ValueError(f"unknown capabilities: {sorted(unknown)}")
        object.__setattr__(self, "capabilities", frozenset(self.capabilities))
        object.__setattr__(self, "layer_offsets", tuple(int(x) for x in self.layer_offsets))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "embed_dim": self.embed_dim,
            "style_dim": self.style_dim,
            "layer_offsets": list(self.layer_offsets),
            "capabilities": sorted(self.capabilities),
            "fingerprint": self.fingerprint,
            "max_batch": self.max_batch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackendDescriptor":
        try:
            return cls(
                name=str(d["name"]),
                embed_dim=int(d["embed_dim"]),
                style_dim=int(d["style_dim"]),
                layer_offsets=tuple(d.get("layer_offsets", [])),
                capabilities=frozenset(d.get("capabilities", [])),
                fingerprint=str(d["fingerprint"]),
                max_batch=int(d.get("max_batch", 1024)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendFailure(f"malformed backend descriptor: {exc}") from exc


class Backend(abc.ABC):
    """Uniform model-backend handle. Concrete classes implement the _impl
    hooks for the capabilities they advertise."""

    @abc.abstractmethod
    def describe(self) -> BackendDescriptor:
        ...

    # -- hooks -------------------------------------------------------------

    def _embed_text_impl(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def _embed_image_impl(self, images: Sequence[bytes]) -> np.ndarray:
        raise NotImplementedError

    def _generate_impl(self, styles: np.ndarray) -> List[bytes]:
        raise NotImplementedError

    def _invert_impl(self, images: Sequence[bytes]) -> np.ndarray:
        raise NotImplementedError

    # -- public surface ----------------------------------------------------

    def _require(self, capability: str):
        desc = self.describe()
        if capability not in desc.capabilities:
            raise CapabilityMissing(
                f"backend {desc.name!r} does not provide {capability!r}"
            )
        return desc

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        """One embedding row per text, shape (n, embed_dim) float32."""
        desc = self._require(CAP_EMBED_TEXT)
        if len(texts) == 0:
            return np.zeros((0, desc.embed_dim), dtype=np.float32)
        out = np.asarray(self._embed_text_impl([str(t) for t in texts]), dtype=np.float32)
        return self._check_embeddings(out, len(texts), desc)

    def embed_image(self, images: Sequence[bytes]) -> np.ndarray:
        """One embedding row per encoded image, shape (n, embed_dim) float32."""
        desc = self._require(CAP_EMBED_IMAGE)
        if len(images) == 0:
            return np.zeros((0, desc.embed_dim), dtype=np.float32)
        out = np.asarray(self._embed_image_impl(list(images)), dtype=np.float32)
        return self._check_embeddings(out, len(images), desc)

    def generate(self, styles) -> List[bytes]:
        """One PNG byte string per style vector."""
        desc = self._require(CAP_GENERATE)
        styles = np.asarray(styles, dtype=np.float32)
        if styles.size == 0:
            return []
        if styles.ndim == 1:
            styles = styles[None, :]
        if styles.shape[1] != desc.style_dim:
            raise DimensionMismatch(
                f"styles have {styles.shape[1]} channels, backend expects {desc.style_dim}"
            )
        images = self._generate_impl(styles)
        if len(images) != styles.shape[0]:
            raise BackendFailure(
                f"backend returned {len(images)} images for {styles.shape[0]} styles"
            )
        return images

    def invert(self, images: Sequence[bytes]) -> np.ndarray:
        """Style vectors for each image, shape (n, style_dim) float32."""
        desc = self._require(CAP_INVERT)
        if len(images) == 0:
            return np.zeros((0, desc.style_dim), dtype=np.float32)
        out = np.asarray(self._invert_impl(list(images)), dtype=np.float32)
        if out.shape != (len(images), desc.style_dim):
            raise DimensionMismatch(
                f"inversion returned shape {out.shape}, expected "
                f"({len(images)}, {desc.style_dim})"
            )
        return out

    def _check_embeddings(self, out: np.ndarray, n: int, desc: BackendDescriptor) -> np.ndarray:
        if out.ndim != 2 or out.shape[0] != n or out.shape[1] != desc.embed_dim:
            raise DimensionMismatch(
                f"backend returned embeddings of shape {out.shape}, expected "
                f"({n}, {desc.embed_dim})"
            )
        if not np.all(np.isfinite(out)):
            raise BackendFailure("backend returned non-finite embeddings")
        return out
