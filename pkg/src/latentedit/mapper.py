"""Mapping embedding directions into style space and applying edits.

``map_direction`` projects a text direction onto every channel direction,
zeroes channels whose |projection| falls below the sparsity threshold beta,
and rescales so the largest surviving magnitude is exactly 1. If beta wipes
out every channel the normalizer is undefined; that is a typed error
(DivergentNormalization), never a silent zero edit.

``apply_edit`` is then plain style-space arithmetic:
``edited = source + alpha * delta_s`` followed by generation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .backends.base import (
    Backend,
    CAP_EMBED_IMAGE,
    CAP_INVERT,
)
from .channels import ChannelDirectionMatrix
from .directions import EditTextDirection, NEUTRAL_DIFF, SVM_NORMAL
from .errors import (
    AllCombinationsDiverged,
    CapabilityMissing,
    DimensionMismatch,
    DivergentNormalization,
    InversionUnsupported,
    UsageError,
)
from .validation import as_style_vector

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 6.0
DEFAULT_BETA = 0.1


@dataclass(frozen=True)
class StyleEditDirection:
    """Sparse, max-normalized style-space edit vector."""

    delta_s: np.ndarray
    beta: float
    raw_dots: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta_s, dtype=np.float64)
        raw = np.asarray(self.raw_dots, dtype=np.float64)
        delta.setflags(write=False)
        raw.setflags(write=False)
        object.__setattr__(self, "delta_s", delta)
        object.__setattr__(self, "raw_dots", raw)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.flatnonzero(self.delta_s))

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.delta_s))


@dataclass(frozen=True)
class EditRequest:
    """One edit: instruction plus strength/sparsity and a source."""

    instruction: str
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    method: str = SVM_NORMAL
    neutral_text: Optional[str] = None
    source_style: Optional[np.ndarray] = None
    source_image: Optional[bytes] = None

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise UsageError(f"alpha must be finite, got {self.alpha!r}")
        if self.beta < 0 or not np.isfinite(self.beta):
            raise UsageError(f"beta must be finite and >= 0, got {self.beta!r}")
        if self.method not in (SVM_NORMAL, NEUTRAL_DIFF):
            raise UsageError(f"unknown method {self.method!r}")
        if self.method == NEUTRAL_DIFF and not self.neutral_text:
            raise UsageError("the baseline method requires a neutral text")
        if self.method == SVM_NORMAL and self.neutral_text:
            raise UsageError("the SVM method takes no neutral text")
        if (self.source_style is None) == (self.source_image is None):
            raise UsageError("provide exactly one of source_style / source_image")


@dataclass(frozen=True)
class EditResult:
    edited_image: bytes
    edited_style: np.ndarray
    applied_direction: StyleEditDirection
    text_direction: EditTextDirection
    alpha: float
    objective: Optional[float] = None


def map_direction(
    channels: ChannelDirectionMatrix, delta_t: EditTextDirection, beta: float
) -> StyleEditDirection:
    """Project the text direction onto every channel direction, threshold at
    beta, and normalize by the largest surviving magnitude."""
    if beta < 0 or not np.isfinite(beta):
        raise UsageError(f"beta must be finite and >= 0, got {beta!r}")
    if channels.embed_dim != delta_t.dim:
        raise DimensionMismatch(
            f"channel directions have d={channels.embed_dim}, "
            f"text direction has d={delta_t.dim}"
        )
    raw = channels.rows @ delta_t.delta_t
    kept = np.where(np.abs(raw) >= beta, raw, 0.0)
    peak = float(np.abs(kept).max()) if kept.size else 0.0
    if peak == 0.0:
        raise DivergentNormalization(beta, float(np.abs(raw).max()) if raw.size else 0.0)
    return StyleEditDirection(delta_s=kept / peak, beta=float(beta), raw_dots=raw)


def apply_edit(
    source_style,
    direction: StyleEditDirection,
    alpha: float,
    backend: Backend,
    instruction_embedding: Optional[np.ndarray] = None,
) -> Tuple[bytes, np.ndarray, Optional[float]]:
    """Shift the style vector along the edit direction and generate.

    Returns (png_bytes, edited_style, objective). The objective - cosine
    between the edited image's embedding and the instruction embedding - is
    filled when the embedding capability and the instruction embedding are
    both available.
    """
    desc = backend.describe()
    source = as_style_vector(source_style, style_dim=desc.style_dim).astype(np.float64)
    if direction.delta_s.shape[0] != desc.style_dim:
        raise DimensionMismatch(
            f"edit direction has {direction.delta_s.shape[0]} channels, "
            f"backend expects {desc.style_dim}"
        )
    if not np.isfinite(alpha):
        raise UsageError(f"alpha must be finite, got {alpha!r}")
    edited = source + alpha * direction.delta_s
    image = backend.generate(edited.astype(np.float32)[None, :])[0]

    objective = None
    if instruction_embedding is not None and CAP_EMBED_IMAGE in desc.capabilities:
        img_emb = backend.embed_image([image])[0].astype(np.float64)
        ref = np.asarray(instruction_embedding, dtype=np.float64)
        denom = np.linalg.norm(img_emb) * np.linalg.norm(ref)
        if denom > 0:
            objective = float(img_emb @ ref / denom)
    return image, edited, objective


def invert_image(image: bytes, backend: Backend) -> np.ndarray:
    """Style feature of an existing image, via the backend's encoder."""
    desc = backend.describe()
    if CAP_INVERT not in desc.capabilities:
        raise InversionUnsupported(
            f"backend {desc.name!r} cannot invert images into style space"
        )
    return backend.invert([image])[0]


def grid_values(start: float, stop: float, step: float) -> List[float]:
    """Inclusive arithmetic grid; the endpoint is kept when it lands within
    1e-9 of a step multiple."""
    if step <= 0:
        raise UsageError(f"grid step must be positive, got {step!r}")
    if stop < start:
        raise UsageError(f"empty grid: stop {stop} < start {start}")
    out = []
    i = 0
    while True:
        v = start + i * step
        if v > stop + 1e-9:
            break
        out.append(round(v, 12))
        i += 1
    return out


@dataclass(frozen=True)
class SweepEntry:
    alpha: float
    beta: float
    objective: Optional[float] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class SweepResult:
    entries: Tuple[SweepEntry, ...]
    best: Optional[SweepEntry]

    def as_rows(self) -> List[dict]:
        return [
            {
                "alpha": e.alpha,
                "beta": e.beta,
                "objective": e.objective,
                "error": e.error,
            }
            for e in self.entries
        ]


def sweep(
    channels: ChannelDirectionMatrix,
    delta_t: EditTextDirection,
    source_style,
    backend: Backend,
    instruction_embedding: np.ndarray,
    alpha_grid: Iterable[float],
    beta_grid: Iterable[float],
) -> SweepResult:
    """Evaluate every (alpha, beta) pair, maximizing the edited-image /
    instruction cosine. Grid points are visited alpha-major; divergent
    combinations are recorded as errors and excluded from the argmax."""
    alphas = list(alpha_grid)
    betas = list(beta_grid)
    if not alphas or not betas:
        raise UsageError("alpha and beta grids must be non-empty")
    desc = backend.describe()
    if CAP_EMBED_IMAGE not in desc.capabilities:
        raise CapabilityMissing("sweep objective needs the image-embedding capability")

    directions = {}
    for beta in betas:
        try:
            directions[beta] = map_direction(channels, delta_t, beta)
        except DivergentNormalization as exc:
            directions[beta] = exc

    entries: List[SweepEntry] = []
    best: Optional[SweepEntry] = None
    for alpha in alphas:
        for beta in betas:
            direction = directions[beta]
            if isinstance(direction, DivergentNormalization):
                entries.append(SweepEntry(alpha, beta, error=str(direction)))
                continue
            _, _, objective = apply_edit(
                source_style, direction, alpha, backend, instruction_embedding
            )
            entry = SweepEntry(alpha, beta, objective=objective)
            entries.append(entry)
            if objective is not None and (best is None or objective > best.objective):
                best = entry
    if best is None:
        raise AllCombinationsDiverged(betas)
    return SweepResult(entries=tuple(entries), best=best)
