"""Latency benchmark for the instruction-conditioned stage.

Times exactly the work that separates this engine from a precomputed-direction
baseline: one retrieval pass (top-k and bottom-k together) plus SVM training
on the 2k retrieved embeddings. Generation time is deliberately out of scope
(it is identical for both approaches and GPU-bound).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import _kernels
from .store import CorpusIndex
from .svm import LabeledEmbeddingSet, train_svm


@dataclass(frozen=True)
class BenchReport:
    corpus_rows: int
    corpus_dim: int
    k: int
    trials: int
    times_ms: List[float] = field(default_factory=list)

    @property
    def p50_ms(self) -> float:
        return statistics.median(self.times_ms)

    @property
    def p95_ms(self) -> float:
        ordered = sorted(self.times_ms)
        idx = max(0, int(np.ceil(0.95 * len(ordered))) - 1)
        return ordered[idx]

    @property
    def max_ms(self) -> float:
        return max(self.times_ms)

    def summary(self) -> str:
        return (
            f"retrieval(2x{self.k}) + SVM over {self.corpus_rows} x {self.corpus_dim}: "
            f"p50 {self.p50_ms:.3f} ms | p95 {self.p95_ms:.3f} ms | "
            f"max {self.max_ms:.3f} ms ({self.trials} trials)"
        )

    def to_dict(self) -> dict:
        return {
            "corpus_rows": self.corpus_rows,
            "corpus_dim": self.corpus_dim,
            "k": self.k,
            "trials": self.trials,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "max_ms": self.max_ms,
            "times_ms": list(self.times_ms),
        }


def _one_pass(index: CorpusIndex, query: np.ndarray, k: int) -> None:
    top, bottom = index.retrieve_both(query, k)
    data = LabeledEmbeddingSet(
        positives=index.rows_for([i for i, _ in top]),
        negatives=index.rows_for([i for i, _ in bottom]),
        positive_ids=[i for i, _ in top],
        negative_ids=[i for i, _ in bottom],
    )
    train_svm(data)


def run_bench(
    index: CorpusIndex,
    k: int = 100,
    trials: int = 20,
    warmup: int = 3,
    seed: int = 0,
) -> BenchReport:
    """Median/percentile wall times of retrieval(2k)+SVM on this corpus.

    Warmup passes (untimed) populate the prefilter, JIT caches, and CPU
    caches; each timed trial uses a fresh seeded query vector.
    """
    _kernels.warmup()
    rng = np.random.default_rng(seed)
    queries = rng.standard_normal((warmup + trials, index.dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)

    for i in range(warmup):
        _one_pass(index, queries[i], k)

    times_ms = []
    for i in range(trials):
        q = queries[warmup + i]
        t0 = time.perf_counter()
        _one_pass(index, q, k)
        times_ms.append((time.perf_counter() - t0) * 1e3)

    return BenchReport(
        corpus_rows=index.n_rows,
        corpus_dim=index.dim,
        k=k,
        trials=trials,
        times_ms=times_ms,
    )
