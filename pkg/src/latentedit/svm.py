"""Linear hinge-loss SVM trained by deterministic dual coordinate descent.

The primal problem is

    min_{w,b}  0.5 ||w||^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))

solved through its dual (box-constrained QP with one equality constraint)
using maximal-violating-pair updates; ``w`` is recovered from the dual
variables and ``b`` by exact minimization of the piecewise-linear hinge sum,
taking the midpoint of the flat minimizing interval. Everything is
deterministic: fixed selection rule, first-index tie-break, no randomness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import _kernels
from .errors import DegenerateData, DimensionMismatch, UsageError
from .validation import as_matrix, check_labels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperplane:
    """Learned separating hyperplane w . h + b = 0."""

    w: np.ndarray
    b: float
    objective: float
    converged: bool
    n_iter: int = 0
    kkt_gap: float = float("nan")


@dataclass(frozen=True)
class LabeledEmbeddingSet:
    """Positive/negative embedding sets with their source ids."""

    positives: np.ndarray
    negatives: np.ndarray
    positive_ids: Sequence[str] = field(default_factory=tuple)
    negative_ids: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        pos = as_matrix(self.positives, name="positives")
        neg = as_matrix(self.negatives, name="negatives")
        if pos.shape[0] < 1 or neg.shape[0] < 1:
            raise UsageError("both label sets must be non-empty")
        if pos.shape[1] != neg.shape[1]:
            raise DimensionMismatch(
                f"positives have dim {pos.shape[1]}, negatives {neg.shape[1]}"
            )
        overlap = set(self.positive_ids) & set(self.negative_ids)
        if overlap:
            raise UsageError(f"ids in both label sets: {sorted(overlap)[:5]}")
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)

    @property
    def dim(self) -> int:
        return self.positives.shape[1]

    def stacked(self):
        X = np.vstack([self.positives, self.negatives])
        y = np.concatenate(
            [np.ones(self.positives.shape[0]), -np.ones(self.negatives.shape[0])]
        )
        return X, y


def _optimal_bias(margins_no_b: np.ndarray, y: np.ndarray) -> float:
    """Exact argmin over b of sum_i max(0, 1 - y_i(m_i + b)).

    The sum is convex piecewise-linear in b with unit slope steps at the
    breakpoints t_i = y_i - m_i; the slope passes zero after n_pos steps, so
    the minimizing set is [t_(n_pos), t_(n_pos+1)] of the sorted breakpoints.
    Returns the midpoint of that interval (deterministic, and symmetric data
    yields b = 0).
    """
    t = np.sort(y - margins_no_b, kind="stable")
    n_pos = int((y > 0).sum())
    lo = t[n_pos - 1]
    hi = t[n_pos] if n_pos < t.shape[0] else t[n_pos - 1]
    return float(0.5 * (lo + hi))


class LinearHingeSVM(BaseEstimator, ClassifierMixin):
    """sklearn-compatible binary SVM with labels in {-1, +1}.

    Parameters
    ----------
    reg_weight : weight C on the hinge-loss sum (the quadratic term is fixed
        at 0.5 ||w||^2).
    tol : stopping threshold on the maximal KKT violation of the dual.
    max_iters : cap on pairwise dual updates; if exhausted the estimator
        still fits but sets ``converged_ = False``.
    """

    def __init__(self, reg_weight: float = 1.0, tol: float = 1e-6, max_iters: int = 10000):
        self.reg_weight = reg_weight
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, X, y):
        if not (self.reg_weight > 0):
            raise UsageError(f"reg_weight must be positive, got {self.reg_weight!r}")
        if not (self.tol > 0):
            raise UsageError(f"tol must be positive, got {self.tol!r}")
        X = as_matrix(X, name="X")
        y = check_labels(y)
        if y.shape[0] != X.shape[0]:
            raise UsageError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        for i in range(1, X.shape[0]):  # early exit on the first distinct row
            if not np.array_equal(X[0], X[i]):
                break
        else:
            raise DegenerateData("all training points are identical")

        K = X @ X.T
        alpha, n_iter, converged, gap = _kernels.smo_dual(
            K, y, float(self.reg_weight), float(self.tol), int(self.max_iters)
        )
        if not converged:
            logger.warning(
                "SVM did not converge in %d iterations (KKT gap %.3g)", n_iter, gap
            )
        w = X.T @ (alpha * y)
        b = _optimal_bias(X @ w, y)
        hinge = np.maximum(0.0, 1.0 - y * (X @ w + b)).sum()
        objective = 0.5 * float(w @ w) + float(self.reg_weight) * float(hinge)

        self.coef_ = w
        self.intercept_ = b
        self.dual_coef_ = alpha
        self.objective_ = objective
        self.converged_ = bool(converged)
        self.n_iter_ = int(n_iter)
        self.kkt_gap_ = float(gap)
        self.classes_ = np.array([-1.0, 1.0])
        return self

    def decision_function(self, X):
        X = as_matrix(X, dim=self.coef_.shape[0], name="X")
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0.0, 1.0, -1.0)

    def hyperplane(self) -> Hyperplane:
        return Hyperplane(
            w=self.coef_.copy(),
            b=float(self.intercept_),
            objective=float(self.objective_),
            converged=self.converged_,
            n_iter=self.n_iter_,
            kkt_gap=self.kkt_gap_,
        )


def train_svm(
    data: LabeledEmbeddingSet,
    reg_weight: float = 1.0,
    tol: float = 1e-6,
    max_iters: int = 10000,
) -> Hyperplane:
    """Train on a labeled embedding set; returns the learned hyperplane.

    Deterministic for identical inputs. Exhausting max_iters is not an
    error: the result is returned with ``converged=False``.
    """
    X, y = data.stacked()
    est = LinearHingeSVM(reg_weight=reg_weight, tol=tol, max_iters=max_iters).fit(X, y)
    return est.hyperplane()
