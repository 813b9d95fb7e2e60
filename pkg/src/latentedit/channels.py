"""Per-style-channel directions in embedding space.

For every style channel c the backend generates image pairs from styles
perturbed by plus/minus ``multiplier * sigma_c`` along that channel, embeds
both sides, and averages the differences. The resulting C x d matrix is the
bridge that lets a text direction be projected into style space.

The precompute is the expensive stage (2 * n_samples generations per
channel), so it checkpoints per channel and can resume after interruption;
the assembled matrix is identical either way.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .backends.base import Backend
from .errors import (
    BackendFailure,
    CheckpointMismatch,
    DimensionMismatch,
    FingerprintMismatch,
    TooFewSamples,
    UsageError,
    WrongArtifactKind,
)
from .store import new_manifest, read_embedding_file, write_embedding_file

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_MULTIPLIER = 5.0
DEFAULT_SAMPLE_COUNT = 100
CHANNEL_KIND = "channel_directions"


@dataclass(frozen=True)
class StyleStatistics:
    """Per-channel population standard deviation of a style sample."""

    sigma: np.ndarray
    sample_count: int
    seed: int = 0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.ndim != 1 or np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise UsageError("sigma must be a finite non-negative vector")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class ChannelDirectionMatrix:
    """Row c is the embedding-space displacement for style channel c."""

    rows: np.ndarray
    sigma_multiplier: float
    sample_count: int
    backend_fingerprint: str
    normalized_embeddings: bool = True
    degenerate_channels: Tuple[int, ...] = ()

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or not np.all(np.isfinite(rows)):
            raise UsageError("channel directions must be a finite 2-D matrix")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "degenerate_channels", tuple(int(c) for c in self.degenerate_channels))

    @property
    def style_dim(self) -> int:
        return self.rows.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.rows.shape[1]

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.rows.astype("<f8").tobytes())
        h.update(f"{self.sigma_multiplier}:{self.sample_count}:{self.backend_fingerprint}".encode())
        return h.hexdigest()


def compute_style_statistics(styles, seed: int = 0) -> StyleStatistics:
    """Population standard deviation per channel over n >= 2 style samples."""
    arr = np.asarray(styles, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise TooFewSamples(
            f"need at least 2 style samples in a 2-D matrix, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise UsageError("style samples contain NaN or Inf")
    sigma = arr.std(axis=0)  # ddof=0: population standard deviation
    return StyleStatistics(sigma=sigma, sample_count=arr.shape[0], seed=seed)


def sample_styles(style_dim: int, n: int, seed: int = 0) -> np.ndarray:
    """Seeded standard-normal style samples (suitable for synthetic backends)."""
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, style_dim)).astype(np.float32)


def _channel_direction(
    backend: Backend,
    styles: np.ndarray,
    sigma_c: float,
    channel: int,
    multiplier: float,
    normalize: bool,
    max_batch: int,
) -> np.ndarray:
    """Average embedding displacement for one channel (one +/- pair batch)."""
    n = styles.shape[0]
    step = np.float32(multiplier * sigma_c)
    plus = styles.copy()
    plus[:, channel] += step
    minus = styles.copy()
    minus[:, channel] -= step
    both = np.vstack([plus, minus])

    embeddings = []
    for start in range(0, both.shape[0], max_batch):
        chunk = both[start : start + max_batch]
        images = backend.generate(chunk)
        embeddings.append(backend.embed_image(images).astype(np.float64))
    emb = np.vstack(embeddings)
    if normalize:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        emb = emb / norms
    return (emb[:n] - emb[n:]).mean(axis=0)


class _Checkpoint:
    """Per-channel resume state for the precompute."""

    def __init__(self, path: Optional[Path], meta: str, C: int, d: int):
        self.path = Path(path) if path else None
        self.meta = meta
        self.rows = np.zeros((C, d), dtype=np.float64)
        self.done = np.zeros(C, dtype=bool)
        if self.path and self.path.exists():
            data = np.load(self.path, allow_pickle=False)
            if str(data["meta"]) != meta:
                raise CheckpointMismatch(
                    f"{self.path} was produced by a different configuration"
                )
            self.rows = data["rows"]
            self.done = data["done"]
            logger.info("resuming channel precompute: %d/%d done", self.done.sum(), C)

    def record(self, channel: int, row: np.ndarray):
        self.rows[channel] = row
        self.done[channel] = True
        if self.path:
            tmp = Path(str(self.path) + ".tmp")
            with open(tmp, "wb") as fh:
                np.savez(fh, rows=self.rows, done=self.done, meta=self.meta)
            os.replace(tmp, self.path)

    def cleanup(self):
        if self.path and self.path.exists():
            self.path.unlink()


def compute_channel_directions(
    backend: Backend,
    styles,
    stats: StyleStatistics,
    multiplier: float = DEFAULT_SIGMA_MULTIPLIER,
    normalize_embeddings: bool = True,
    checkpoint_path=None,
    max_concurrency: int = 1,
) -> ChannelDirectionMatrix:
    """Perturb every style channel and average the embedding displacements.

    Channels with sigma_c == 0 get exactly-zero rows and are listed in
    ``degenerate_channels``. Assembly order is deterministic regardless of
    ``max_concurrency``.
    """
    if not multiplier > 0:
        raise UsageError(f"multiplier must be positive, got {multiplier!r}")
    desc = backend.describe()
    styles = np.asarray(styles, dtype=np.float32)
    if styles.ndim != 2 or styles.shape[1] != desc.style_dim:
        raise DimensionMismatch(
            f"styles shape {styles.shape} does not match backend C={desc.style_dim}"
        )
    if stats.sigma.shape[0] != desc.style_dim:
        raise DimensionMismatch(
            f"sigma has {stats.sigma.shape[0]} channels, backend reports {desc.style_dim}"
        )
    C, d = desc.style_dim, desc.embed_dim

    meta = hashlib.sha256(
        b"|".join(
            [
                desc.fingerprint.encode(),
                styles.tobytes(),
                stats.sigma.astype("<f8").tobytes(),
                f"{multiplier}:{normalize_embeddings}".encode(),
            ]
        )
    ).hexdigest()
    ckpt = _Checkpoint(checkpoint_path, meta, C, d)

    pending = [c for c in range(C) if not ckpt.done[c]]
    degenerate = [c for c in range(C) if stats.sigma[c] == 0.0]

    def job(c: int) -> Tuple[int, np.ndarray]:
        if stats.sigma[c] == 0.0:
            return c, np.zeros(d)
        row = _channel_direction(
            backend, styles, float(stats.sigma[c]), c, multiplier,
            normalize_embeddings, desc.max_batch,
        )
        return c, row

    if max_concurrency > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            for c, row in sorted(pool.map(job, pending), key=lambda t: t[0]):
                ckpt.record(c, row)
    else:
        for c in pending:
            ckpt.record(*job(c))

    matrix = ChannelDirectionMatrix(
        rows=ckpt.rows,
        sigma_multiplier=float(multiplier),
        sample_count=styles.shape[0],
        backend_fingerprint=desc.fingerprint,
        normalized_embeddings=normalize_embeddings,
        degenerate_channels=tuple(degenerate),
    )
    ckpt.cleanup()
    return matrix


def save_channel_directions(matrix: ChannelDirectionMatrix, path) -> None:
    manifest = new_manifest(
        ids=[f"c{c:05d}" for c in range(matrix.style_dim)],
        backend=matrix.backend_fingerprint,
        kind=CHANNEL_KIND,
        sigma_multiplier=matrix.sigma_multiplier,
        sample_count=matrix.sample_count,
        backend_fingerprint=matrix.backend_fingerprint,
        normalized_embeddings=matrix.normalized_embeddings,
        degenerate_channels=list(matrix.degenerate_channels),
    )
    write_embedding_file(path, matrix.rows.astype(np.float32), manifest)


def load_channel_directions(path) -> ChannelDirectionMatrix:
    rows, manifest = read_embedding_file(path)
    kind = manifest.get("kind")
    if kind != CHANNEL_KIND:
        raise WrongArtifactKind(
            f"{path}: expected kind={CHANNEL_KIND!r}, found {kind!r}"
        )
    return ChannelDirectionMatrix(
        rows=rows.astype(np.float64),
        sigma_multiplier=float(manifest.get("sigma_multiplier", DEFAULT_SIGMA_MULTIPLIER)),
        sample_count=int(manifest.get("sample_count", 0)),
        backend_fingerprint=str(manifest.get("backend_fingerprint", "")),
        normalized_embeddings=bool(manifest.get("normalized_embeddings", True)),
        degenerate_channels=tuple(manifest.get("degenerate_channels", [])),
    )


def check_backend_binding(
    matrix: ChannelDirectionMatrix, backend: Backend, strict: bool = True
) -> bool:
    """Verify the matrix was precomputed against this backend's weights."""
    actual = backend.describe().fingerprint
    if matrix.backend_fingerprint == actual:
        return True
    msg = (
        f"channel directions were computed for backend "
        f"{matrix.backend_fingerprint[:12]}..., current backend is {actual[:12]}..."
    )
    if strict:
        raise FingerprintMismatch(msg)
    logger.warning("%s (continuing: strict=False)", msg)
    return False
