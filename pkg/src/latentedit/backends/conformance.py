"""Backend protocol conformance suite.

Runs the same battery against any Backend handle (in-process or remote), so
a served model stack can be validated with exactly the checks the synthetic
oracle passes. Checks adapt to the advertised capability set; semantic
quality is out of scope - this verifies shapes, determinism, error typing,
and generate/invert consistency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import EditEngineError
from .base import (
    ALL_CAPABILITIES,
    Backend,
    CAP_EMBED_IMAGE,
    CAP_EMBED_TEXT,
    CAP_GENERATE,
    CAP_INVERT,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check(results: List[CheckResult], name: str, fn) -> None:
    try:
        fn()
        results.append(CheckResult(name, True))
    except AssertionError as exc:
        results.append(CheckResult(name, False, str(exc)))
    except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
        results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))


def run_conformance(backend: Backend) -> List[CheckResult]:
    results: List[CheckResult] = []
    desc = backend.describe()

    def descriptor_sane():
        assert desc.embed_dim >= 1 and desc.style_dim >= 1, "dims must be >= 1"
        assert desc.fingerprint, "fingerprint must be non-empty"
        assert set(desc.capabilities) <= ALL_CAPABILITIES, "unknown capability"
        assert desc.max_batch >= 1, "max_batch must be >= 1"
        again = backend.describe()
        assert again.to_dict() == desc.to_dict(), "describe() is not stable"

    _check(results, "descriptor", descriptor_sane)

    caps = desc.capabilities

    if CAP_EMBED_TEXT in caps:
        def text_shapes():
            out = backend.embed_text(["one", "two words"])
            assert out.shape == (2, desc.embed_dim), f"shape {out.shape}"
            assert np.all(np.isfinite(out)), "non-finite embedding"
            assert backend.embed_text([]).shape == (0, desc.embed_dim), "empty batch"

        def text_determinism():
            a = backend.embed_text(["determinism probe"])
            b = backend.embed_text(["determinism probe"])
            assert np.array_equal(a, b), "identical inputs gave different embeddings"

        _check(results, "embed_text shapes", text_shapes)
        _check(results, "embed_text determinism", text_determinism)

    styles = None
    if CAP_GENERATE in caps:
        rng = np.random.default_rng(7)
        styles = rng.standard_normal((3, desc.style_dim)).astype(np.float32)

        def generate_batch():
            images = backend.generate(styles)
            assert len(images) == 3, f"{len(images)} images for 3 styles"
            assert all(isinstance(i, (bytes, bytearray)) and i for i in images)
            assert backend.generate(np.zeros((0, desc.style_dim), np.float32)) == []

        def generate_determinism():
            a = backend.generate(styles[:1])
            b = backend.generate(styles[:1])
            assert a == b, "identical styles gave different images"

        def generate_bad_dim():
            try:
                backend.generate(np.zeros((1, desc.style_dim + 1), np.float32))
            except EditEngineError:
                return
            raise AssertionError("wrong-width styles were accepted")

        _check(results, "generate batch", generate_batch)
        _check(results, "generate determinism", generate_determinism)
        _check(results, "generate rejects bad dims", generate_bad_dim)

    if CAP_EMBED_IMAGE in caps and CAP_GENERATE in caps:
        def embed_generated():
            images = backend.generate(styles)
            out = backend.embed_image(images)
            assert out.shape == (3, desc.embed_dim), f"shape {out.shape}"
            assert np.all(np.isfinite(out)), "non-finite embedding"
            again = backend.embed_image(images)
            assert np.array_equal(out, again), "embed_image not deterministic"

        _check(results, "embed_image of generated", embed_generated)

    if CAP_INVERT in caps and CAP_GENERATE in caps:
        def invert_shapes():
            images = backend.generate(styles)
            rec = backend.invert(images)
            assert rec.shape == (3, desc.style_dim), f"shape {rec.shape}"
            assert np.all(np.isfinite(rec)), "non-finite styles"

        _check(results, "invert shapes", invert_shapes)

    return results


def assert_conformant(backend: Backend) -> List[CheckResult]:
    results = run_conformance(backend)
    failures = [r for r in results if not r.passed]
    if failures:
        lines = "; ".join(f"{r.name}: {r.detail}" for r in failures)
        raise AssertionError(f"backend fails conformance: {lines}")
    return results
