"""Instruction-conditioned edit directions in the joint embedding space.

Two construction routes:

* ``svm_direction`` - retrieve the k most- and k least-similar corpus images
  for the instruction, train a linear SVM on their embeddings, and take the
  unit normal of the separating hyperplane. Needs no description of the
  original image.
* ``neutral_diff_direction`` - average, over a prompt bank, the difference
  between the embeddings of "<prompt> <instruction>" and
  "<prompt> <neutral text>". This is the baseline route and requires the
  neutral text.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateData, KTooLarge, UsageError, ZeroDirection
from .store import CorpusIndex
from .svm import Hyperplane, LabeledEmbeddingSet, train_svm

logger = logging.getLogger(__name__)

SVM_NORMAL = "svm_normal"
NEUTRAL_DIFF = "neutral_diff"

DEFAULT_RETRIEVAL_K = 100
REFERENCE_PROMPT_COUNT = 80


@dataclass(frozen=True)
class EditTextDirection:
    """Unit direction in embedding space describing the requested edit."""

    delta_t: np.ndarray
    method: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        vec = np.asarray(self.delta_t, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-5:
            raise UsageError(f"direction must be unit length, got norm {norm!r}")
        vec.setflags(write=False)
        object.__setattr__(self, "delta_t", vec)

    @property
    def dim(self) -> int:
        return self.delta_t.shape[0]


@dataclass(frozen=True)
class PromptBank:
    """Ordered, unique text prompts prepended to instruction texts."""

    prompts: Sequence[str]

    def __post_init__(self):
        prompts = tuple(str(p) for p in self.prompts)
        if not prompts:
            raise UsageError("prompt bank is empty")
        if len(set(prompts)) != len(prompts):
            raise UsageError("prompt bank has duplicate entries")
        object.__setattr__(self, "prompts", prompts)

    def __len__(self) -> int:
        return len(self.prompts)

    def apply(self, text: str) -> list:
        """Concatenate each prompt with the text (single space separator)."""
        return [f"{p} {text}" if p else text for p in self.prompts]


def load_prompt_bank(path) -> PromptBank:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    return PromptBank([ln for ln in lines if ln])


def default_prompt_bank() -> PromptBank:
    """The packaged 80-prompt reference bank."""
    text = resources.files("latentedit.data").joinpath("prompts.txt").read_text("utf-8")
    bank = PromptBank([ln.strip() for ln in text.splitlines() if ln.strip()])
    assert len(bank) == REFERENCE_PROMPT_COUNT
    return bank


def _unit(vec: np.ndarray, context: str) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        raise ZeroDirection(f"{context} produced a zero direction")
    return vec / norm


def svm_direction(
    corpus: CorpusIndex,
    instruction: str,
    text_embedder,
    k: int = DEFAULT_RETRIEVAL_K,
    reg_weight: float = 1.0,
    tol: float = 1e-6,
    max_iters: int = 10000,
) -> EditTextDirection:
    """Edit direction as the unit normal of an SVM separating the k most-
    and k least-similar corpus embeddings for the instruction.

    ``text_embedder`` is any backend handle exposing ``embed_text``.
    """
    if not instruction or not instruction.strip():
        raise UsageError("instruction text is empty")
    if 2 * k > corpus.n_rows:
        raise KTooLarge(
            f"need 2k={2 * k} distinct rows but corpus has N={corpus.n_rows}"
        )
    query = text_embedder.embed_text([instruction])[0]
    top, bottom = corpus.retrieve_both(query, k)
    pos_ids = [i for i, _ in top]
    neg_ids = [i for i, _ in bottom]
    if set(pos_ids) & set(neg_ids):
        raise DegenerateData(
            "retrieval tails overlap (exact cosine ties span the corpus middle)"
        )
    data = LabeledEmbeddingSet(
        positives=corpus.rows_for(pos_ids),
        negatives=corpus.rows_for(neg_ids),
        positive_ids=pos_ids,
        negative_ids=neg_ids,
    )
    plane: Hyperplane = train_svm(data, reg_weight=reg_weight, tol=tol, max_iters=max_iters)
    delta = _unit(plane.w, "svm normal")
    return EditTextDirection(
        delta_t=delta,
        method=SVM_NORMAL,
        provenance={
            "instruction": instruction,
            "k": int(k),
            "positives": pos_ids,
            "negatives": neg_ids,
            "positive_scores": [s for _, s in top],
            "negative_scores": [s for _, s in bottom],
            "svm_objective": plane.objective,
            "svm_converged": plane.converged,
            "corpus_fingerprint": corpus.fingerprint,
        },
    )


def neutral_diff_direction(
    t: str,
    t0: str,
    prompts: Optional[PromptBank],
    text_embedder,
) -> EditTextDirection:
    """Baseline direction: prompt-averaged difference from neutral text to
    instruction, unit-normalized. Raises ZeroDirection when t and t0 embed
    identically under every prompt."""
    if not t or not t.strip():
        raise UsageError("instruction text is empty")
    if not t0 or not t0.strip():
        raise UsageError("neutral text is empty")
    bank = prompts if prompts is not None else default_prompt_bank()
    target = np.asarray(text_embedder.embed_text(bank.apply(t)), dtype=np.float64)
    neutral = np.asarray(text_embedder.embed_text(bank.apply(t0)), dtype=np.float64)
    delta = _unit((target - neutral).mean(axis=0), f"diff of {t!r} and {t0!r}")
    return EditTextDirection(
        delta_t=delta,
        method=NEUTRAL_DIFF,
        provenance={
            "instruction": t,
            "neutral_text": t0,
            "prompt_count": len(bank),
            "prompt_bank_hash": hashlib.sha256(
                "\n".join(bank.prompts).encode("utf-8")
            ).hexdigest()[:16],
        },
    )
