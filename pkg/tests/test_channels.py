import numpy as np
import pytest

from latentedit import (
    SyntheticBackend,
    SyntheticBackendConfig,
    compute_channel_directions,
    compute_style_statistics,
    load_channel_directions,
    save_channel_directions,
)
from latentedit.backends.synthetic import MIXING_AXIS
from latentedit.channels import check_backend_binding, sample_styles
from latentedit.errors import (
    CheckpointMismatch,
    FingerprintMismatch,
    TooFewSamples,
    UsageError,
    WrongArtifactKind,
)


class TestStyleStatistics:
    def test_two_point_population_std(self):
        stats = compute_style_statistics([[0.0, 0.0], [2.0, 0.0]])
        assert stats.sigma.tolist() == [1.0, 0.0]
        assert stats.sample_count == 2

    def test_identical_rows_zero_sigma(self):
        stats = compute_style_statistics(np.ones((5, 3)))
        assert np.all(stats.sigma == 0.0)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            compute_style_statistics(np.ones((1, 3)))

    def test_reference_sample_count(self):
        styles = sample_styles(4, 100, seed=1)
        stats = compute_style_statistics(styles)
        assert stats.sample_count == 100


@pytest.fixture(scope="module")
def linear_setup():
    backend = SyntheticBackend(
        SyntheticBackendConfig(
            seed=4, d=16, C=6, mixing_mode=MIXING_AXIS, normalize_embeddings=False
        )
    )
    styles = sample_styles(6, 40, seed=8)
    stats = compute_style_statistics(styles)
    return backend, styles, stats


class TestChannelDirections:
    def test_linear_closed_form(self, linear_setup):
        # linear backend, no normalization: each row is
        # 2 * multiplier * sigma_c * (column c of the mixing matrix)
        backend, styles, stats = linear_setup
        matrix = compute_channel_directions(
            backend, styles, stats, multiplier=5.0, normalize_embeddings=False
        )
        for c in range(6):
            expected = 10.0 * stats.sigma[c] * backend.mixing[:, c]
            err = np.linalg.norm(matrix.rows[c] - expected)
            assert err <= 1e-6 * max(np.linalg.norm(expected), 1e-30)

    def test_multiplier_linearity(self, linear_setup):
        backend, styles, stats = linear_setup
        m1 = compute_channel_directions(
            backend, styles, stats, multiplier=2.0, normalize_embeddings=False
        )
        m2 = compute_channel_directions(
            backend, styles, stats, multiplier=4.0, normalize_embeddings=False
        )
        assert np.allclose(m2.rows, 2.0 * m1.rows, rtol=1e-6, atol=1e-9)

    def test_degenerate_channel_zero_row(self, linear_setup):
        backend, styles, stats = linear_setup
        frozen = styles.copy()
        frozen[:, 2] = 1.25  # constant channel: sigma exactly 0
        stats2 = compute_style_statistics(frozen)
        assert stats2.sigma[2] == 0.0
        matrix = compute_channel_directions(backend, frozen, stats2)
        assert np.all(matrix.rows[2] == 0.0)
        assert 2 in matrix.degenerate_channels

    def test_determinism(self, linear_setup):
        backend, styles, stats = linear_setup
        a = compute_channel_directions(backend, styles, stats)
        b = compute_channel_directions(backend, styles.copy(), stats)
        assert np.array_equal(a.rows, b.rows)

    def test_concurrent_assembly_identical(self, linear_setup):
        backend, styles, stats = linear_setup
        serial = compute_channel_directions(backend, styles, stats)
        threaded = compute_channel_directions(backend, styles, stats, max_concurrency=4)
        assert np.array_equal(serial.rows, threaded.rows)

    def test_bad_multiplier(self, linear_setup):
        backend, styles, stats = linear_setup
        with pytest.raises(UsageError):
            compute_channel_directions(backend, styles, stats, multiplier=0.0)


class TestPersistence:
    def test_round_trip(self, linear_setup, tmp_path):
        backend, styles, stats = linear_setup
        matrix = compute_channel_directions(backend, styles, stats)
        path = tmp_path / "chan.embd"
        save_channel_directions(matrix, path)
        loaded = load_channel_directions(path)
        assert np.array_equal(
            loaded.rows.astype(np.float32), matrix.rows.astype(np.float32)
        )
        assert loaded.sigma_multiplier == matrix.sigma_multiplier
        assert loaded.sample_count == matrix.sample_count
        assert loaded.backend_fingerprint == matrix.backend_fingerprint
        assert loaded.degenerate_channels == matrix.degenerate_channels
        # second save is byte-identical modulo the creation timestamp
        path2 = tmp_path / "chan2.embd"
        save_channel_directions(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_kind_mismatch(self, linear_setup, tmp_path):
        from latentedit import save_index
        from conftest import make_corpus

        save_index(make_corpus(n=3, d=4), tmp_path / "c.embd")
        with pytest.raises(WrongArtifactKind):
            load_channel_directions(tmp_path / "c.embd")

    def test_fingerprint_binding(self, linear_setup):
        backend, styles, stats = linear_setup
        matrix = compute_channel_directions(backend, styles, stats)
        assert check_backend_binding(matrix, backend, strict=True)
        other = SyntheticBackend(SyntheticBackendConfig(seed=99, d=16, C=6))
        with pytest.raises(FingerprintMismatch):
            check_backend_binding(matrix, other, strict=True)
        assert check_backend_binding(matrix, other, strict=False) is False


class _FlakyBackend:
    """Wrapper that dies after a fixed number of generate calls."""

    def __init__(self, inner, die_after: int):
        self.inner = inner
        self.calls = 0
        self.die_after = die_after

    def describe(self):
        return self.inner.describe()

    def generate(self, styles):
        self.calls += 1
        if self.calls > self.die_after:
            raise RuntimeError("backend killed")
        return self.inner.generate(styles)

    def embed_image(self, images):
        return self.inner.embed_image(images)


class TestCheckpointResume:
    def test_resume_produces_identical_matrix(self, linear_setup, tmp_path):
        backend, styles, stats = linear_setup
        ckpt = tmp_path / "partial.npz"
        flaky = _FlakyBackend(backend, die_after=3)
        with pytest.raises(RuntimeError):
            compute_channel_directions(
                backend=flaky, styles=styles, stats=stats, checkpoint_path=ckpt
            )
        assert ckpt.exists()  # checkpoint retained on failure
        resumed = compute_channel_directions(
            backend=backend, styles=styles, stats=stats, checkpoint_path=ckpt
        )
        assert not ckpt.exists()  # cleaned up on success
        direct = compute_channel_directions(backend=backend, styles=styles, stats=stats)
        assert np.array_equal(resumed.rows, direct.rows)

    def test_checkpoint_config_mismatch(self, linear_setup, tmp_path):
        backend, styles, stats = linear_setup
        ckpt = tmp_path / "partial.npz"
        flaky = _FlakyBackend(backend, die_after=2)
        with pytest.raises(RuntimeError):
            compute_channel_directions(
                backend=flaky, styles=styles, stats=stats, checkpoint_path=ckpt
            )
        with pytest.raises(CheckpointMismatch):
            compute_channel_directions(
                backend=backend, styles=styles, stats=stats,
                multiplier=3.0, checkpoint_path=ckpt,
            )
