"""End-to-end edit pipeline over a loaded corpus, channel matrix and backend.

The engine owns the one piece of shared mutable state in the system: an LRU
cache of instruction -> text-direction results keyed by (method,
instruction, neutral, k, corpus fingerprint, backend fingerprint). Slider
moves over alpha/beta therefore never retrain the SVM; only the cheap
projection and generation rerun.
"""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from typing import List, Optional, Tuple

import numpy as np

from .backends.base import Backend
from .channels import ChannelDirectionMatrix, check_backend_binding
from .directions import (
    DEFAULT_RETRIEVAL_K,
    EditTextDirection,
    NEUTRAL_DIFF,
    PromptBank,
    SVM_NORMAL,
    default_prompt_bank,
    neutral_diff_direction,
    svm_direction,
)
from .errors import UsageError
from .mapper import (
    EditRequest,
    EditResult,
    StyleEditDirection,
    SweepResult,
    apply_edit,
    invert_image,
    map_direction,
    sweep,
)
from .store import CorpusIndex
from .validation import as_style_vector

logger = logging.getLogger(__name__)


class DirectionCache:
    """Thread-safe LRU for computed text directions."""

    def __init__(self, maxsize: int = 128):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key) -> Optional[EditTextDirection]:
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return None

    def put(self, key, value: EditTextDirection) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def __len__(self) -> int:
        return len(self._data)


class EditEngine:
    def __init__(
        self,
        corpus: CorpusIndex,
        channels: ChannelDirectionMatrix,
        backend: Backend,
        prompt_bank: Optional[PromptBank] = None,
        retrieval_k: int = DEFAULT_RETRIEVAL_K,
        cache_size: int = 128,
        strict_fingerprint: bool = True,
    ):
        self.corpus = corpus
        self.channels = channels
        self.backend = backend
        self.prompt_bank = prompt_bank or default_prompt_bank()
        self.retrieval_k = retrieval_k
        self.cache = DirectionCache(cache_size)
        check_backend_binding(channels, backend, strict=strict_fingerprint)
        desc = backend.describe()
        if channels.style_dim != desc.style_dim:
            raise UsageError(
                f"channel matrix covers {channels.style_dim} channels, "
                f"backend reports {desc.style_dim}"
            )

    # -- directions ----------------------------------------------------------

    def direction(
        self,
        instruction: str,
        method: str = SVM_NORMAL,
        neutral_text: Optional[str] = None,
        k: Optional[int] = None,
    ) -> EditTextDirection:
        k = self.retrieval_k if k is None else k
        key = (
            method,
            instruction,
            neutral_text,
            k,
            self.corpus.fingerprint,
            self.backend.describe().fingerprint,
        )
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        if method == SVM_NORMAL:
            direction = svm_direction(self.corpus, instruction, self.backend, k=k)
        elif method == NEUTRAL_DIFF:
            if not neutral_text:
                raise UsageError("the baseline method requires a neutral text")
            direction = neutral_diff_direction(
                instruction, neutral_text, self.prompt_bank, self.backend
            )
        else:
            raise UsageError(f"unknown method {method!r}")
        self.cache.put(key, direction)
        return direction

    # -- editing ---------------------------------------------------------------

    def resolve_source_style(self, request: EditRequest) -> np.ndarray:
        if request.source_style is not None:
            return as_style_vector(
                request.source_style, self.backend.describe().style_dim
            )
        return invert_image(request.source_image, self.backend)

    def edit(self, request: EditRequest, k: Optional[int] = None) -> EditResult:
        source = self.resolve_source_style(request)
        text_dir = self.direction(
            request.instruction, request.method, request.neutral_text, k
        )
        style_dir: StyleEditDirection = map_direction(
            self.channels, text_dir, request.beta
        )
        instruction_emb = self.backend.embed_text([request.instruction])[0]
        image, edited, objective = apply_edit(
            source, style_dir, request.alpha, self.backend, instruction_emb
        )
        return EditResult(
            edited_image=image,
            edited_style=edited,
            applied_direction=style_dir,
            text_direction=text_dir,
            alpha=float(request.alpha),
            objective=objective,
        )

    # -- retrieval / sweep ------------------------------------------------------

    def retrieve(
        self, instruction: str, k: Optional[int] = None
    ) -> Tuple[List[Tuple[str, float]], List[Tuple[str, float]]]:
        k = self.retrieval_k if k is None else k
        query = self.backend.embed_text([instruction])[0]
        return self.corpus.retrieve_both(query, k)

    def sweep(
        self,
        request: EditRequest,
        alpha_grid,
        beta_grid,
        k: Optional[int] = None,
    ) -> SweepResult:
        source = self.resolve_source_style(request)
        text_dir = self.direction(
            request.instruction, request.method, request.neutral_text, k
        )
        instruction_emb = self.backend.embed_text([request.instruction])[0]
        return sweep(
            self.channels,
            text_dir,
            source,
            self.backend,
            instruction_emb,
            alpha_grid,
            beta_grid,
        )
