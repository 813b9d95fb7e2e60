"""Input-validation helpers shared across the engine.

All embedding math runs in float64; persistent storage is float32. These
helpers normalize inputs to those conventions and fail loudly on NaN/Inf,
wrong shapes, or wrong dimensions.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, UsageError

UNIT_NORM_ATOL = 1e-5


def all_finite(arr: np.ndarray) -> bool:
    """Cheap full-finiteness test: a finite sum implies no NaN/Inf anywhere
    (NaN propagates, a lone Inf survives, Inf - Inf is NaN). Only a sum that
    comes back non-finite - possibly from benign overflow - pays for the
    elementwise scan."""
    s = float(arr.sum())
    if np.isfinite(s):
        return True
    return bool(np.all(np.isfinite(arr)))


def as_vector(values, dim: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking its length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise UsageError(f"{name} must be 1-D, got shape {arr.shape}")
    if not all_finite(arr):
        raise UsageError(f"{name} contains NaN or Inf")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def as_matrix(values, dim: Optional[int] = None, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally checking row length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise UsageError(f"{name} must be 2-D, got shape {arr.shape}")
    if not all_finite(arr):
        raise UsageError(f"{name} contains NaN or Inf")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatch(f"{name} has row dimension {arr.shape[1]}, expected {dim}")
    return arr


def as_style_vector(values, style_dim: Optional[int] = None) -> np.ndarray:
    """Style vectors are canonically float32."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise UsageError(f"style vector must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError("style vector contains NaN or Inf")
    if style_dim is not None and arr.shape[0] != style_dim:
        raise DimensionMismatch(
            f"style vector has {arr.shape[0]} channels, backend expects {style_dim}"
        )
    return arr


def check_unit_norm(vec: np.ndarray, name: str = "vector") -> None:
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > UNIT_NORM_ATOL:
        raise UsageError(f"{name} flagged unit-normalized but has L2 norm {norm!r}")


def check_unique_ids(ids: Sequence[str]) -> None:
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if list(ids).count(i) > 1})
        raise UsageError(f"duplicate ids: {dupes[:5]}")


def check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise UsageError("labels must be +1 or -1")
    if not ((y > 0).any() and (y < 0).any()):
        raise UsageError("both classes must be present")
    return y
