"""Persistent embedding storage and exact cosine retrieval.

File container ("EMBD" format)
------------------------------
    bytes 0-3   magic  b"EMBD"
    4-7         version, u32 LE (currently 1)
    8-15        row_count, u64 LE
    16-19       dim, u32 LE
    20          dtype, u8 (0 = float32)
    21..        payload, row-major little-endian values

A JSON manifest sits next to the container at ``<path>.manifest.json`` and
lists the row ids in order plus provenance (``backend``, ``created``,
``kind``, ``unit_normalized`` and artifact-specific extras).

Retrieval
---------
Scores are cosine similarities accumulated in float64 over the float32
storage, and results are exact: for large corpora a quantized prefilter scan
narrows the rows to a candidate band whose width is a rigorous upper bound on
the prefilter error, and the band is re-scored exactly in float64. Ties break
on lexicographic id.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import struct
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .errors import (
    BadMagic,
    IoFailure,
    KTooLarge,
    ManifestMismatch,
    TruncatedPayload,
    UnsupportedDtype,
    UsageError,
    VersionUnsupported,
    WrongArtifactKind,
    ZeroNormQuery,
)
from .validation import as_vector, check_unique_ids

logger = logging.getLogger(__name__)

MAGIC = b"EMBD"
VERSION = 1
HEADER = struct.Struct("<4sIQIB")
DTYPE_FLOAT32 = 0

MOST_SIMILAR = "most_similar"
LEAST_SIMILAR = "least_similar"

# Quantized prefilter pass only above this row count.
PREFILTER_MIN_ROWS = 4096
# Covers float32 arithmetic inside the prefilter kernels (scores are <= 1).
PREFILTER_ROUNDING_SLACK = 1e-6
# Bound on |float32 gemv score - canonical float64 score|: gamma_d for d up
# to ~2000 at single precision is ~3e-5 of ||row|| ||query||; 1e-4 is 3x slack.
F32_REFINE_MARGIN = 1e-4


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_embedding_file(path, rows: np.ndarray, manifest: dict) -> None:
    """Write a float32 matrix plus its sidecar manifest."""
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise UsageError(f"embedding payload must be 2-D, got shape {rows.shape}")
    ids = manifest.get("ids", [])
    if len(ids) != rows.shape[0]:
        raise ManifestMismatch(
            f"manifest lists {len(ids)} ids for {rows.shape[0]} rows"
        )
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1], DTYPE_FLOAT32))
            fh.write(rows.tobytes())
        with open(manifest_path(path), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_embedding_file(path) -> Tuple[np.ndarray, dict]:
    """Read a container back bit-exactly. Returns (float32 rows, manifest)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than header")
    magic, version, row_count, dim, dtype = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedDtype(f"{path}: dtype code {dtype} not supported")
    expected = row_count * dim * 4
    payload = raw[HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    rows = np.frombuffer(payload, dtype="<f4").reshape(row_count, dim).copy()
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"missing manifest {mpath}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestMismatch(f"unparseable manifest {mpath}: {exc}") from exc
    ids = manifest.get("ids")
    if not isinstance(ids, list):
        raise ManifestMismatch(f"{mpath}: manifest has no id list")
    if len(ids) != row_count:
        raise ManifestMismatch(
            f"{mpath}: manifest lists {len(ids)} ids for {row_count} rows"
        )
    return rows, manifest


def new_manifest(ids: Sequence[str], backend: str = "", kind: str = "corpus", **extra) -> dict:
    manifest = {
        "ids": list(ids),
        "backend": backend,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "kind": kind,
    }
    manifest.update(extra)
    return manifest


def _row_norms(rows: np.ndarray) -> np.ndarray:
    """Canonical per-row L2 norm: sqrt(dot(row, row)) in float64.

    Computed row-by-row so each norm is a pure function of that row's bytes;
    batched reductions (axis-wise norm, gemm) round differently depending on
    shape, which would break bit-reproducible scores.
    """
    out = np.empty(rows.shape[0])
    for i in range(rows.shape[0]):
        v = rows[i].astype(np.float64)
        out[i] = np.sqrt(np.dot(v, v))
    return out


class _Prefilter:
    """Int8-quantized copy of the normalized rows plus error-bound constants.

    Writing a unit row as r = D_r + e_r (dequantized codes plus residual) and
    the unit query as q = D_q + e_q, the scan computes D_r . D_q, so

        |r.q - D_r.D_q| <= |D_r.e_q| + |e_r.D_q| + |e_r.e_q|
                        <= ||D_r|| ||e_q|| + ||e_r|| (||D_q|| + ||e_q||)

    by Cauchy-Schwarz. The row-side norms are precomputed maxima; the
    query-side ones are exact per query. ~2e-2 for 512-dim unit vectors.
    """

    def __init__(self, rows: np.ndarray, norms: np.ndarray):
        unit = rows.astype(np.float64) / norms[:, None]
        peak = np.abs(unit).max(axis=1)
        peak[peak == 0.0] = 1.0
        scale32 = (peak / 127.0).astype(np.float32)
        scale = scale32.astype(np.float64)
        codes = np.clip(np.rint(unit / scale[:, None]), -127, 127).astype(np.int8)
        dequant = codes.astype(np.float64) * scale[:, None]
        resid = unit - dequant
        self.codes_t = np.ascontiguousarray(codes.T)  # (dim, n): scan layout
        self.scale32 = scale32
        self.max_l2_dequant = float(np.sqrt((dequant * dequant).sum(axis=1).max()))
        self.max_l2_resid = float(np.sqrt((resid * resid).sum(axis=1).max()))

    def scores_and_margin(self, unit_query: np.ndarray) -> Tuple[np.ndarray, float]:
        """Approximate scores for every row and a bound on |approx - exact|."""
        peak = float(np.abs(unit_query).max())
        if peak == 0.0:
            peak = 1.0
        qscale32 = np.float32(peak / 127.0)
        qscale = float(qscale32)  # exact float64 value of the scale the kernel uses
        qcodes = np.clip(np.rint(unit_query / qscale), -127, 127).astype(np.int8)
        q_dequant = qcodes.astype(np.float64) * qscale
        q_resid = unit_query - q_dequant
        l2_eq = float(np.linalg.norm(q_resid))
        l2_dq = float(np.linalg.norm(q_dequant))
        margin = (
            self.max_l2_dequant * l2_eq
            + self.max_l2_resid * (l2_dq + l2_eq)
            + PREFILTER_ROUNDING_SLACK
        )
        out = np.empty(self.codes_t.shape[1], dtype=np.float32)
        row_scale_q = self.scale32 * qscale32
        _kernels.int8_scan(self.codes_t, qcodes, row_scale_q, out)
        return out, margin


class CorpusIndex:
    """Immutable embedding matrix with ids, supporting exact cosine top/bottom-k.

    Rows are kept bit-exactly as stored (float32); all scoring happens in
    float64 against cached norms. Safe to share across threads.
    """

    def __init__(
        self,
        rows: np.ndarray,
        ids: Sequence[str],
        unit_normalized: bool = False,
        source_manifest: str = "",
        manifest: Optional[dict] = None,
    ):
        rows = np.ascontiguousarray(rows, dtype=np.float32)
        if rows.ndim != 2:
            raise UsageError(f"corpus rows must be 2-D, got shape {rows.shape}")
        if rows.shape[0] < 1:
            raise UsageError("index must contain at least one row")
        if not np.all(np.isfinite(rows)):
            raise UsageError("corpus rows contain NaN or Inf")
        ids = [str(i) for i in ids]
        if len(ids) != rows.shape[0]:
            raise ManifestMismatch(
                f"{len(ids)} ids for {rows.shape[0]} rows"
            )
        check_unique_ids(ids)
        norms = _row_norms(rows)
        if np.any(norms == 0.0):
            bad = [ids[i] for i in np.flatnonzero(norms == 0.0)[:5]]
            raise UsageError(f"zero-norm corpus rows (cosine undefined): {bad}")
        if unit_normalized:
            off = np.abs(norms - 1.0)
            if off.max() > 1e-5:
                worst = ids[int(off.argmax())]
                raise UsageError(
                    f"index flagged unit_normalized but row {worst!r} has norm "
                    f"{norms[int(off.argmax())]:.8f}"
                )
        rows.setflags(write=False)
        self.rows = rows
        self.ids = tuple(ids)
        self.unit_normalized = bool(unit_normalized)
        self.source_manifest = source_manifest
        self.manifest = manifest or new_manifest(ids, unit_normalized=unit_normalized)
        self._norms = norms
        self._ids_arr = np.asarray(self.ids, dtype=np.str_)
        self._id_to_row = {i: r for r, i in enumerate(self.ids)}
        self._lock = threading.Lock()
        self._prefilter: Optional[_Prefilter] = None
        self._fingerprint: Optional[str] = None

    # -- basic accessors ---------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @property
    def fingerprint(self) -> str:
        """Stable content hash of rows + ids (hex digest)."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(HEADER.pack(MAGIC, VERSION, self.n_rows, self.dim, DTYPE_FLOAT32))
            h.update(np.ascontiguousarray(self.rows, dtype="<f4").tobytes())
            h.update("\x00".join(self.ids).encode("utf-8"))
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def rows_for(self, ids: Sequence[str]) -> np.ndarray:
        """Gather stored rows (float64 copy) for the given ids, in order."""
        try:
            idx = [self._id_to_row[i] for i in ids]
        except KeyError as exc:
            raise UsageError(f"unknown id {exc.args[0]!r}") from exc
        return self.rows[idx].astype(np.float64)

    # -- scoring -----------------------------------------------------------

    def _get_prefilter(self) -> Optional[_Prefilter]:
        if self.n_rows < PREFILTER_MIN_ROWS or not _kernels.HAVE_NUMBA:
            return None
        if self._prefilter is None:
            with self._lock:
                if self._prefilter is None:
                    self._prefilter = _Prefilter(self.rows, self._norms)
        return self._prefilter

    def _exact_scores(self, unit_query: np.ndarray, which: np.ndarray) -> np.ndarray:
        """Exact cosine of the selected rows: float64 dot over float32 storage.

        Scored row-by-row on purpose: a vector dot of fixed length is
        bit-deterministic, while a matrix-vector product's reduction order
        (and thus its last ulp) depends on the batch shape. Per-row scoring
        makes every score independent of which other rows were scored.
        """
        rows = self.rows
        norms = self._norms
        out = np.empty(which.shape[0])
        for j, r in enumerate(which):
            out[j] = np.dot(rows[r].astype(np.float64), unit_query) / norms[r]
        return out

    def _candidate_band(
        self, scores: np.ndarray, margin: float, k: int, largest: bool
    ) -> np.ndarray:
        """Indices whose score could still reach the k-th place given that
        every score is within ``margin`` of the truth."""
        n = scores.shape[0]
        s64 = scores.astype(np.float64)
        if largest:
            kth = float(np.partition(s64, n - k)[n - k])
            return np.flatnonzero(s64 >= kth - 2.0 * margin)
        kth = float(np.partition(s64, k - 1)[k - 1])
        return np.flatnonzero(s64 <= kth + 2.0 * margin)

    def _rank(self, idx: np.ndarray, exact: np.ndarray, k: int, largest: bool) -> List[Tuple[str, float]]:
        key = -exact if largest else exact
        order = np.lexsort((self._ids_arr[idx], key))[:k]
        chosen = idx[order]
        return [(self.ids[i], float(exact[order[j]])) for j, i in enumerate(chosen)]

    def _refine_band(self, idx: np.ndarray, unit_q: np.ndarray, k: int, largest: bool):
        """Resolve a candidate band to the exact top/bottom-k.

        A float32 gemv over the band (cheap, batched) narrows it to the rows
        within F32_REFINE_MARGIN of the k-th place; only those get the
        canonical per-row float64 scoring.
        """
        sub = self.rows if idx.shape[0] == self.n_rows else self.rows[idx]
        mid = (sub @ unit_q.astype(np.float32)).astype(np.float64) / self._norms[idx]
        keep = self._candidate_band(mid, F32_REFINE_MARGIN, k, largest)
        final = idx[keep]
        exact = self._exact_scores(unit_q, final)
        return self._rank(final, exact, k, largest)

    def retrieve_both(
        self, query, k: int
    ) -> Tuple[List[Tuple[str, float]], List[Tuple[str, float]]]:
        """Exact (top-k, bottom-k) by cosine in one corpus pass."""
        q = as_vector(query, dim=self.dim, name="query")
        qnorm = float(np.linalg.norm(q))
        if qnorm == 0.0:
            raise ZeroNormQuery("query has zero norm; cosine undefined")
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise UsageError(f"k must be a positive integer, got {k!r}")
        if k > self.n_rows:
            raise KTooLarge(f"k={k} exceeds corpus size N={self.n_rows}")
        unit_q = q / qnorm

        pre = self._get_prefilter()
        allrows = np.arange(self.n_rows)
        if pre is None:
            top = self._refine_band(allrows, unit_q, k, largest=True)
            bottom = self._refine_band(allrows, unit_q, k, largest=False)
            return top, bottom

        approx, margin = pre.scores_and_margin(unit_q)
        out = []
        for largest in (True, False):
            band = self._candidate_band(approx, margin, k, largest)
            out.append(self._refine_band(band, unit_q, k, largest))
        return out[0], out[1]

    def retrieve(self, query, k: int, polarity: str = MOST_SIMILAR) -> List[Tuple[str, float]]:
        """Exact top-k (``most_similar``) or bottom-k (``least_similar``) rows.

        Returns (id, cosine) pairs; descending score for most_similar,
        ascending for least_similar, ties broken by lexicographic id.
        """
        if polarity not in (MOST_SIMILAR, LEAST_SIMILAR):
            raise UsageError(f"polarity must be {MOST_SIMILAR!r} or {LEAST_SIMILAR!r}")
        top, bottom = self.retrieve_both(query, k)
        return top if polarity == MOST_SIMILAR else bottom


# -- module-level operation surface ---------------------------------------


def save_index(index: CorpusIndex, path, dtype: str = "float32") -> None:
    """Persist an index; ``load_index(save_index(x))`` is bit-exact."""
    if dtype != "float32":
        raise UnsupportedDtype(f"only float32 payloads are defined, got {dtype!r}")
    manifest = dict(index.manifest)
    manifest["ids"] = list(index.ids)
    manifest.setdefault("kind", "corpus")
    manifest["unit_normalized"] = index.unit_normalized
    write_embedding_file(path, index.rows, manifest)


def load_index(path) -> CorpusIndex:
    """Load a corpus container; rows come back bit-exactly."""
    rows, manifest = read_embedding_file(path)
    kind = manifest.get("kind", "corpus")
    if kind != "corpus":
        raise WrongArtifactKind(f"{path}: expected a corpus file, found kind={kind!r}")
    return CorpusIndex(
        rows,
        manifest["ids"],
        unit_normalized=bool(manifest.get("unit_normalized", False)),
        source_manifest=str(manifest_path(path)),
        manifest=manifest,
    )


def retrieve(index: CorpusIndex, query, k: int, polarity: str = MOST_SIMILAR):
    return index.retrieve(query, k, polarity)
