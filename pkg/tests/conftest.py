import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from latentedit import (
    CorpusIndex,
    SyntheticBackend,
    SyntheticBackendConfig,
)
from latentedit.backends.synthetic import MIXING_AXIS

LEXICON = {"smile": 3, "blond": 1, "young": 5, "glasses": 7}


@pytest.fixture(scope="session")
def backend():
    """Orthonormal-mixing synthetic backend, embeddings normalized."""
    return SyntheticBackend(
        SyntheticBackendConfig(seed=11, d=32, C=8, attribute_lexicon=LEXICON)
    )


@pytest.fixture(scope="session")
def raw_backend():
    """Axis-mixing backend with normalization off (closed-form oracle)."""
    return SyntheticBackend(
        SyntheticBackendConfig(
            seed=11, d=32, C=8, mixing_mode=MIXING_AXIS,
            attribute_lexicon=LEXICON, normalize_embeddings=False,
        )
    )


def make_corpus(n=500, d=32, seed=0, ids=None) -> CorpusIndex:
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, d)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    ids = ids or [f"img{i:06d}" for i in range(n)]
    return CorpusIndex(rows, ids, unit_normalized=True)


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(n=500, d=32, seed=1)


@pytest.fixture(scope="session")
def lexicon_corpus(backend):
    """Corpus whose rows are synthetic image embeddings split along the
    'smile' attribute channel: half with channel 3 strongly positive, half
    strongly negative."""
    rng = np.random.default_rng(5)
    n = 400
    styles = rng.standard_normal((n, 8)).astype(np.float32)
    styles[: n // 2, 3] += 4.0
    styles[n // 2 :, 3] -= 4.0
    images = backend.generate(styles)
    emb = backend.embed_image(images)
    ids = [f"pos{i:04d}" if i < n // 2 else f"neg{i:04d}" for i in range(n)]
    return CorpusIndex(emb, ids), styles
