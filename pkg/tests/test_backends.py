import json

import numpy as np
import pytest

from latentedit.backends import (
    BackendDescriptor,
    RemoteBackend,
    SyntheticBackend,
    SyntheticBackendConfig,
    CAP_EMBED_TEXT,
    CAP_GENERATE,
)
from latentedit.backends.conformance import assert_conformant, run_conformance
from latentedit.backends.synthetic import MIXING_AXIS
from latentedit.backends.wire import start_in_thread
from latentedit.errors import (
    BackendFailure,
    CapabilityMissing,
    DecodeError,
    DimensionMismatch,
)


class TestSyntheticSemantics:
    def test_lexicon_token_dominant_coordinate(self):
        backend = SyntheticBackend(
            SyntheticBackendConfig(
                seed=0, d=12, C=6, mixing_mode=MIXING_AXIS,
                attribute_lexicon={"smile": 3},
            )
        )
        emb = backend.embed_text(["smile"])[0]
        assert int(np.argmax(np.abs(emb))) == 3

    def test_embed_text_determinism(self, backend):
        a = backend.embed_text(["a smiling face", "blond"])
        b = backend.embed_text(["a smiling face", "blond"])
        assert np.array_equal(a, b)

    def test_embed_image_composition_raw(self, raw_backend):
        styles = np.random.default_rng(0).standard_normal((3, 8)).astype(np.float32)
        images = raw_backend.generate(styles)
        emb = raw_backend.embed_image(images).astype(np.float64)
        expected = styles.astype(np.float64) @ raw_backend.mixing.T
        assert np.allclose(emb, expected, atol=1e-6)

    def test_embed_image_normalized_unit(self, backend):
        styles = np.random.default_rng(1).standard_normal((2, 8)).astype(np.float32)
        emb = backend.embed_image(backend.generate(styles))
        assert np.allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-6)

    def test_generate_invert_identity(self, backend):
        styles = np.random.default_rng(2).standard_normal((4, 8)).astype(np.float32)
        rec = backend.invert(backend.generate(styles))
        assert np.array_equal(rec, styles)

    def test_corrupt_image(self, backend):
        with pytest.raises(DecodeError):
            backend.embed_image([b"not a png"])

    def test_wrong_size_image(self, backend):
        other = SyntheticBackend(SyntheticBackendConfig(seed=0, d=8, C=3))
        image = other.generate(np.zeros((1, 3), np.float32))[0]
        with pytest.raises(DecodeError):
            backend.invert([image])

    def test_empty_batches_no_call(self, backend):
        assert backend.generate([]) == []
        assert backend.embed_text([]).shape == (0, 32)
        assert backend.embed_image([]).shape == (0, 32)
        assert backend.invert([]).shape == (0, 8)

    def test_capability_gating(self):
        limited = SyntheticBackend(
            SyntheticBackendConfig(seed=0, d=8, C=2, capabilities=frozenset({CAP_EMBED_TEXT}))
        )
        with pytest.raises(CapabilityMissing):
            limited.generate(np.zeros((1, 2), np.float32))
        with pytest.raises(CapabilityMissing):
            limited.invert([b"x"])

    def test_batch_of_200_styles(self, backend):
        styles = np.random.default_rng(3).standard_normal((200, 8)).astype(np.float32)
        assert len(backend.generate(styles)) == 200

    def test_descriptor_echoes_config(self, backend):
        desc = backend.describe()
        assert desc.embed_dim == 32 and desc.style_dim == 8
        assert desc.layer_offsets == (0, 4, 8)
        assert desc.fingerprint == SyntheticBackend(backend.config).describe().fingerprint

    def test_orthonormal_mixing_is_orthonormal(self, backend):
        gram = backend.mixing.T @ backend.mixing
        assert np.allclose(gram, np.eye(8), atol=1e-12)


class TestConformance:
    def test_synthetic_full(self, backend):
        assert_conformant(backend)

    def test_synthetic_raw(self, raw_backend):
        assert_conformant(raw_backend)

    def test_limited_capabilities(self):
        limited = SyntheticBackend(
            SyntheticBackendConfig(seed=2, d=8, C=2, capabilities=frozenset({CAP_EMBED_TEXT}))
        )
        results = run_conformance(limited)
        names = {r.name for r in results}
        assert "generate batch" not in names
        assert_conformant(limited)


@pytest.fixture(scope="module")
def served(backend):
    server, thread = start_in_thread(backend)
    yield RemoteBackend(server.url, retries=2, backoff=0.01), backend
    server.shutdown()


class TestWireProtocol:
    def test_descriptor_round_trip(self, served):
        remote, local = served
        assert remote.describe().to_dict() == local.describe().to_dict()

    def test_embed_text_parity(self, served):
        remote, local = served
        a = remote.embed_text(["smile", "two words here"])
        b = local.embed_text(["smile", "two words here"])
        assert np.allclose(a, b, atol=1e-7)  # decimal wire round-trip
        assert a.dtype == np.float32

    def test_float_round_trip_exact(self, served):
        # float32 values survive the decimal wire format bit-exactly
        remote, local = served
        a = remote.embed_text(["precision probe"])
        b = local.embed_text(["precision probe"])
        assert np.array_equal(a, b)

    def test_generate_invert_parity(self, served):
        remote, local = served
        styles = np.random.default_rng(5).standard_normal((2, 8)).astype(np.float32)
        imgs_remote = remote.generate(styles)
        assert imgs_remote == local.generate(styles)
        rec = remote.invert(imgs_remote)
        assert np.array_equal(rec, styles)

    def test_embed_image_parity(self, served):
        remote, local = served
        styles = np.random.default_rng(6).standard_normal((2, 8)).astype(np.float32)
        images = local.generate(styles)
        assert np.array_equal(remote.embed_image(images), local.embed_image(images))

    def test_remote_conformance(self, served):
        remote, _ = served
        assert_conformant(remote)

    def test_capability_error_surfaces(self):
        limited = SyntheticBackend(
            SyntheticBackendConfig(seed=3, d=8, C=2, capabilities=frozenset({CAP_EMBED_TEXT}))
        )
        server, _ = start_in_thread(limited)
        try:
            remote = RemoteBackend(server.url, retries=1)
            with pytest.raises(CapabilityMissing):
                remote.generate(np.zeros((1, 2), np.float32))
        finally:
            server.shutdown()

    def test_decode_error_surfaces(self, served):
        remote, _ = served
        with pytest.raises(DecodeError):
            remote.embed_image([b"garbage bytes"])

    def test_unreachable_backend(self):
        remote = RemoteBackend("http://127.0.0.1:9", retries=2, backoff=0.01)
        with pytest.raises(BackendFailure):
            remote.describe()


class _WrongDimHandler:
    """Mock wire server returning embeddings of the wrong width."""


@pytest.fixture()
def wrong_dim_server(backend):
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
    import threading

    desc = backend.describe().to_dict()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *a):
            pass

        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            self.rfile.read(n)
            if self.path == "/v1/describe":
                payload = desc
            else:
                payload = {"embeddings": [[0.0, 1.0]]}  # wrong width
            data = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestFaultInjection:
    def test_wrong_dimension_surfaced(self, wrong_dim_server):
        remote = RemoteBackend(wrong_dim_server, retries=1)
        with pytest.raises(DimensionMismatch):
            remote.embed_text(["x"])


class TestDescriptor:
    def test_from_dict_validation(self):
        with pytest.raises(BackendFailure):
            BackendDescriptor.from_dict({"name": "x"})

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            BackendDescriptor(
                name="x", embed_dim=0, style_dim=1, layer_offsets=(0, 1),
                capabilities=frozenset(), fingerprint="f",
            )
