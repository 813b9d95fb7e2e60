import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from latentedit import (
    EditEngine,
    compute_channel_directions,
    compute_style_statistics,
)
from latentedit.channels import sample_styles
from latentedit.service import create_app


@pytest.fixture(scope="module")
def stack(backend, lexicon_corpus, tmp_path_factory):
    corpus, styles = lexicon_corpus
    sample = sample_styles(8, 30, seed=3)
    channels = compute_channel_directions(
        backend, sample, compute_style_statistics(sample)
    )
    engine = EditEngine(corpus, channels, backend, retrieval_k=50)
    images_dir = tmp_path_factory.mktemp("thumbs")
    png = backend.generate(np.zeros((1, 8), np.float32))[0]
    (images_dir / "pos0000.png").write_bytes(png)
    app = create_app(engine, images_dir=str(images_dir))
    return TestClient(app), engine, styles


class TestHealth:
    def test_reports_fingerprints(self, stack):
        client, engine, _ = stack
        body = client.get("/api/health").json()
        assert body["status"] == "ok"
        assert body["backend"]["embed_dim"] == 32
        assert body["corpus_fingerprint"] == engine.corpus.fingerprint
        assert body["channels_backend_fingerprint"] == engine.channels.backend_fingerprint


class TestEdit:
    def test_svm_defaults(self, stack):
        client, _, styles = stack
        resp = client.post("/api/edit", json={
            "text": "smile", "style": styles[0].tolist(), "k": 50,
        })
        assert resp.status_code == 200
        body = resp.json()
        assert body["alpha"] == 6.0 and body["beta"] == 0.1
        assert body["support_size"] >= 1
        assert len(body["positives"]) == 50 and len(body["negatives"]) == 50
        image = base64.b64decode(body["image_b64"])
        assert image[:4] == b"\x89PNG"
        assert body["objective"] is not None

    def test_divergence_409_names_beta(self, stack):
        client, _, styles = stack
        resp = client.post("/api/edit", json={
            "text": "smile", "style": styles[0].tolist(), "beta": 50.0, "k": 50,
        })
        assert resp.status_code == 409
        err = resp.json()["error"]
        assert err["code"] == "divergence"
        assert err["beta"] == 50.0
        assert "50" in err["message"]

    def test_cache_hit_on_repeat(self, stack):
        client, engine, styles = stack
        calls = {"n": 0}
        original = engine.corpus.retrieve_both

        def counting(*a, **kw):
            calls["n"] += 1
            return original(*a, **kw)

        engine.corpus.retrieve_both = counting
        try:
            body = {"text": "a very novel instruction", "style": styles[0].tolist(),
                    "k": 50, "alpha": 2.0}
            assert client.post("/api/edit", json=body).status_code == 200
            assert calls["n"] == 1
            body["alpha"] = 5.0  # slider move: same direction, new strength
            assert client.post("/api/edit", json=body).status_code == 200
            assert calls["n"] == 1  # retrieval did not rerun
        finally:
            engine.corpus.retrieve_both = original

    def test_validation_400(self, stack):
        client, _, _ = stack
        resp = client.post("/api/edit", json={"alpha": 1.0})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "usage"

    def test_baseline_without_neutral_400(self, stack):
        client, _, styles = stack
        resp = client.post("/api/edit", json={
            "text": "smile", "style": styles[0].tolist(), "method": "baseline",
        })
        assert resp.status_code == 400

    def test_bad_source_400(self, stack):
        client, _, _ = stack
        resp = client.post("/api/edit", json={"text": "x"})
        assert resp.status_code == 400


class TestRetrieve:
    def test_show_16_each_side(self, stack):
        client, _, _ = stack
        resp = client.post("/api/retrieve", json={"text": "smile", "k": 50, "show": 16})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["positives"]) == 16 and len(body["negatives"]) == 16
        pos_scores = [p["score"] for p in body["positives"]]
        neg_scores = [p["score"] for p in body["negatives"]]
        assert pos_scores == sorted(pos_scores, reverse=True)
        assert neg_scores == sorted(neg_scores)
        assert body["positives"][0]["thumb_url"].startswith("/api/images/")

    def test_k_too_large_400(self, stack):
        client, _, _ = stack
        resp = client.post("/api/retrieve", json={"text": "x", "k": 100000})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "k_too_large"


class TestSweep:
    def test_paper_grid(self, stack):
        client, _, styles = stack
        resp = client.post("/api/sweep", json={
            "text": "smile", "style": styles[0].tolist(), "k": 50,
            "alpha": {"start": 2.0, "stop": 6.0, "step": 0.5},
            "beta": {"start": 0.1, "stop": 0.2, "step": 0.05},
        })
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["entries"]) == 27
        assert body["best"]["objective"] is not None


class TestImages:
    def test_found(self, stack):
        client, _, _ = stack
        resp = client.get("/api/images/pos0000")
        assert resp.status_code == 200
        assert resp.content[:4] == b"\x89PNG"

    def test_unknown_404(self, stack):
        client, _, _ = stack
        assert client.get("/api/images/nope").status_code == 404

    def test_traversal_rejected(self, stack):
        client, _, _ = stack
        assert client.get("/api/images/..%2Fetc").status_code == 404


class TestConcurrency:
    def test_parallel_edits_consistent(self, stack):
        import concurrent.futures

        client, _, styles = stack
        payloads = [
            {"text": t, "style": styles[0].tolist(), "k": 50}
            for t in ("smile", "blond", "young", "glasses")
        ]
        with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
            responses = list(pool.map(lambda p: client.post("/api/edit", json=p), payloads * 2))
        assert all(r.status_code == 200 for r in responses)
        # identical request twice gives identical edited style
        by_text = {}
        for p, r in zip(payloads * 2, responses):
            by_text.setdefault(p["text"], []).append(r.json()["edited_style"])
        for variants in by_text.values():
            assert variants[0] == variants[1]
