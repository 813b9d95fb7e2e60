"""Command-line surface for every pipeline stage.

Exit codes: 0 success, 2 usage, 3 divergent normalization, 4 backend or
capability failure, 5 io/format. The backend comes from exactly one source:
``--backend-url`` (or the LATENT_EDIT_BACKEND_URL environment variable) for
a remote model stack, or ``--synthetic-seed`` for the in-process synthetic
backend. An optional JSON config file supplies defaults; flags win.
"""

from __future__ import annotations

import argparse
import base64
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .backends import RemoteBackend, SyntheticBackend, SyntheticBackendConfig
from .bench import run_bench
from .channels import (
    DEFAULT_SAMPLE_COUNT,
    DEFAULT_SIGMA_MULTIPLIER,
    compute_channel_directions,
    compute_style_statistics,
    load_channel_directions,
    sample_styles,
    save_channel_directions,
)
from .directions import DEFAULT_RETRIEVAL_K, NEUTRAL_DIFF, SVM_NORMAL
from .engine import EditEngine
from .errors import EditEngineError, IoFailure, UsageError
from .mapper import DEFAULT_ALPHA, DEFAULT_BETA, EditRequest, grid_values
from .store import CorpusIndex, load_index, new_manifest, save_index

logger = logging.getLogger(__name__)

ENV_BACKEND_URL = "LATENT_EDIT_BACKEND_URL"
METHOD_ALIASES = {"svm": SVM_NORMAL, "baseline": NEUTRAL_DIFF}


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"config {path} is not valid JSON: {exc}") from exc


def make_backend(args, config: dict):
    url = args.backend_url or config.get("backend_url") or os.environ.get(ENV_BACKEND_URL)
    seed = args.synthetic_seed
    if seed is None:
        seed = config.get("synthetic_seed")
    if args.backend_url and args.synthetic_seed is not None:
        raise UsageError("configure exactly one backend: --backend-url or --synthetic-seed")
    if seed is not None and not args.backend_url:
        return SyntheticBackend(
            SyntheticBackendConfig(
                seed=int(seed),
                d=int(args.synthetic_dim or config.get("synthetic_dim", 32)),
                C=int(args.synthetic_channels or config.get("synthetic_channels", 8)),
            )
        )
    if url:
        return RemoteBackend(url)
    raise UsageError(
        f"no backend configured (use --backend-url, --synthetic-seed, or {ENV_BACKEND_URL})"
    )


def _load_style(path: str) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix == ".npy":
            return np.load(p)
        if p.suffix == ".json":
            return np.asarray(json.loads(p.read_text()), dtype=np.float32)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot load style vector from {path}: {exc}") from exc
    raise UsageError(f"style file must be .npy or .json, got {path}")


def _engine(args, config: dict, need_corpus: bool = True) -> EditEngine:
    backend = make_backend(args, config)
    corpus_path = args.corpus or config.get("corpus")
    channels_path = args.channels or config.get("channels")
    if need_corpus and not corpus_path:
        raise UsageError("--corpus is required")
    if not channels_path:
        raise UsageError("--channels is required")
    corpus = load_index(corpus_path)
    channels = load_channel_directions(channels_path)
    return EditEngine(
        corpus,
        channels,
        backend,
        strict_fingerprint=args.strict_fingerprint,
    )


# -- subcommands --------------------------------------------------------------


def cmd_index_build(args, config) -> int:
    backend = make_backend(args, config)
    try:
        manifest_in = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {args.manifest}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"manifest {args.manifest} is not valid JSON: {exc}") from exc
    items = manifest_in.get("items")
    if not isinstance(items, list) or not items:
        raise UsageError('manifest must carry non-empty "items": [{"id", "path"}, ...]')
    ids = [str(it.get("id", "")) for it in items]
    if len(set(ids)) != len(ids) or "" in ids:
        raise UsageError("manifest ids must be unique and non-empty")

    rows: List[np.ndarray] = []
    kept_ids: List[str] = []
    failures: List[str] = []

    def skip(item_id: str, exc: Exception):
        if args.strict:
            raise exc
        failures.append(f"{item_id}: {exc}")
        print(f"skipping {item_id}: {exc}", file=sys.stderr)

    def embed_batch(batch: List[tuple]):
        # fast path first; on failure isolate the bad images one by one
        try:
            emb = backend.embed_image([img for _, img in batch])
            for (item_id, _), row in zip(batch, emb):
                rows.append(row)
                kept_ids.append(item_id)
            return
        except EditEngineError:
            pass
        for item_id, img in batch:
            try:
                rows.append(backend.embed_image([img])[0])
                kept_ids.append(item_id)
            except EditEngineError as exc:
                skip(item_id, exc)

    batch: List[tuple] = []
    for item in items:
        item_id, path = str(item["id"]), str(item["path"])
        try:
            batch.append((item_id, Path(path).read_bytes()))
        except OSError as exc:
            skip(item_id, IoFailure(f"{path}: {exc}"))
            continue
        if len(batch) >= args.batch:
            embed_batch(batch)
            batch = []
    if batch:
        embed_batch(batch)

    if not rows:
        raise UsageError("no images could be embedded")
    matrix = np.vstack(rows).astype(np.float32)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    unit = bool(np.all(np.abs(norms - 1.0) <= 1e-5))
    desc = backend.describe()
    index = CorpusIndex(
        matrix,
        kept_ids,
        unit_normalized=unit,
        manifest=new_manifest(
            kept_ids,
            backend=desc.name,
            unit_normalized=unit,
            backend_fingerprint=desc.fingerprint,
            skipped=failures,
        ),
    )
    save_index(index, args.out)
    print(f"wrote {index.n_rows} x {index.dim} embeddings to {args.out}"
          + (f" ({len(failures)} skipped)" if failures else ""))
    return 0


def cmd_directions_precompute(args, config) -> int:
    backend = make_backend(args, config)
    desc = backend.describe()
    source = args.styles
    if source.startswith("sample:"):
        n = int(source.split(":", 1)[1])
        styles = sample_styles(desc.style_dim, n, seed=args.seed)
    elif source.startswith("file:"):
        styles = np.load(source.split(":", 1)[1]).astype(np.float32)
    elif source.startswith("invert:"):
        manifest = json.loads(Path(source.split(":", 1)[1]).read_text(encoding="utf-8"))
        images = [Path(it["path"]).read_bytes() for it in manifest["items"]]
        styles = backend.invert(images)
    else:
        raise UsageError("--styles must be sample:<n>, file:<path.npy>, or invert:<manifest>")

    stats = compute_style_statistics(styles, seed=args.seed)
    checkpoint = Path(str(args.out) + ".partial.npz") if args.resume else None
    matrix = compute_channel_directions(
        backend,
        styles,
        stats,
        multiplier=args.multiplier,
        normalize_embeddings=not args.raw_embeddings,
        checkpoint_path=checkpoint,
        max_concurrency=args.concurrency,
    )
    save_channel_directions(matrix, args.out)
    degen = len(matrix.degenerate_channels)
    print(
        f"wrote {matrix.style_dim} channel directions (d={matrix.embed_dim}) to {args.out}"
        + (f"; {degen} degenerate channels" if degen else "")
    )
    return 0


def _request_from_args(args) -> EditRequest:
    method = METHOD_ALIASES.get(args.method, args.method)
    source_style = _load_style(args.style) if args.style else None
    source_image = Path(args.image).read_bytes() if args.image else None
    return EditRequest(
        instruction=args.text,
        alpha=getattr(args, "alpha", DEFAULT_ALPHA),
        beta=getattr(args, "beta", DEFAULT_BETA),
        method=method,
        neutral_text=args.neutral,
        source_style=source_style,
        source_image=source_image,
    )


def cmd_edit(args, config) -> int:
    engine = _engine(args, config)
    request = _request_from_args(args)
    result = engine.edit(request, k=args.k)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_path = out_dir / "edited.png"
    image_path.write_bytes(result.edited_image)
    report = {
        "instruction": request.instruction,
        "method": request.method,
        "alpha": request.alpha,
        "beta": request.beta,
        "support_size": result.applied_direction.support_size,
        "objective": result.objective,
        "provenance": result.text_direction.provenance,
        "edited_style": result.edited_style.tolist(),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=1), encoding="utf-8")
    print(
        f"edited image -> {image_path} "
        f"(support {result.applied_direction.support_size}"
        + (f", objective {result.objective:.4f}" if result.objective is not None else "")
        + ")"
    )
    return 0


def cmd_retrieve(args, config) -> int:
    engine = _engine(args, config)
    top, bottom = engine.retrieve(args.text, k=args.k)
    show = min(args.show, len(top))
    print(f"top {show} of {args.k} most similar:")
    for item_id, score in top[:show]:
        print(f"  + {item_id}\t{score:.6f}")
    print(f"top {show} of {args.k} least similar:")
    for item_id, score in bottom[:show]:
        print(f"  - {item_id}\t{score:.6f}")
    if args.json:
        payload = {
            "positives": [{"id": i, "score": s} for i, s in top],
            "negatives": [{"id": i, "score": s} for i, s in bottom],
        }
        Path(args.json).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    return 0


def _parse_range(spec: str) -> List[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"range must be start:stop:step, got {spec!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"range {spec!r} has non-numeric parts") from exc
    return grid_values(start, stop, step)


def cmd_sweep(args, config) -> int:
    engine = _engine(args, config)
    request = _request_from_args(args)
    alphas = _parse_range(args.alpha_range)
    betas = _parse_range(args.beta_range)
    result = engine.sweep(request, alphas, betas, k=args.k)

    print(f"{'alpha':>7} {'beta':>6} {'objective':>10}")
    for e in result.entries:
        obj = f"{e.objective:.6f}" if e.objective is not None else "diverged"
        print(f"{e.alpha:>7.2f} {e.beta:>6.2f} {obj:>10}")
    print(
        f"best: alpha={result.best.alpha:g} beta={result.best.beta:g} "
        f"objective={result.best.objective:.6f}"
    )
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "beta", "objective", "error"])
            for e in result.entries:
                writer.writerow([e.alpha, e.beta, e.objective, e.error or ""])
    return 0


def cmd_bench(args, config) -> int:
    corpus_path = args.corpus or config.get("corpus")
    if not corpus_path:
        raise UsageError("--corpus is required")
    index = load_index(corpus_path)
    report = run_bench(index, k=args.k, trials=args.trials, warmup=args.warmup)
    print(report.summary())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=1), encoding="utf-8")
    return 0


def cmd_serve(args, config) -> int:
    import uvicorn

    from .service import create_app

    engine = _engine(args, config)
    app = create_app(
        engine,
        images_dir=args.images_dir or config.get("images_dir"),
        cors_origins=[args.cors_origin] if args.cors_origin else ["*"],
    )
    port = args.port or int(config.get("port", 8000))
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-edit",
        description="Instruction-driven latent-space image editing",
    )
    parser.add_argument("--config", help="JSON config file with defaults (flags win)")
    parser.add_argument("--backend-url", help="wire-protocol backend URL")
    parser.add_argument("--synthetic-seed", type=int, help="use the in-process synthetic backend")
    parser.add_argument("--synthetic-dim", type=int, help="synthetic embedding dim (default 32)")
    parser.add_argument("--synthetic-channels", type=int, help="synthetic style channels (default 8)")
    parser.add_argument("--strict-fingerprint", action="store_true",
                        help="refuse channel files computed for another backend")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index-build", help="embed a corpus manifest into an index file")
    p.add_argument("--manifest", required=True, help='JSON {"items": [{"id","path"}]}')
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--strict", action="store_true", help="abort on the first bad image")
    p.set_defaults(fn=cmd_index_build)

    p = sub.add_parser("directions-precompute", help="precompute per-channel directions")
    p.add_argument("--styles", default=f"sample:{DEFAULT_SAMPLE_COUNT}",
                   help="sample:<n> | file:<path.npy> | invert:<manifest.json>")
    p.add_argument("--multiplier", type=float, default=DEFAULT_SIGMA_MULTIPLIER)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw-embeddings", action="store_true",
                   help="skip unit-normalizing image embeddings before differencing")
    p.add_argument("--no-resume", dest="resume", action="store_false",
                   help="ignore/skip the per-channel checkpoint")
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_directions_precompute)

    def add_edit_args(p, need_source=True):
        p.add_argument("--text", required=True, help="the edit instruction")
        p.add_argument("--corpus")
        p.add_argument("--channels")
        p.add_argument("--k", type=int, default=DEFAULT_RETRIEVAL_K)
        if need_source:
            src = p.add_mutually_exclusive_group(required=True)
            src.add_argument("--image", help="source image file to invert and edit")
            src.add_argument("--style", help="source style vector (.npy or .json)")
            p.add_argument("--method", choices=["svm", "baseline"], default="svm")
            p.add_argument("--neutral", help="neutral text (baseline method only)")

    p = sub.add_parser("edit", help="edit an image per a text instruction")
    add_edit_args(p)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(fn=cmd_edit)

    p = sub.add_parser("retrieve", help="show most/least similar corpus items")
    add_edit_args(p, need_source=False)
    p.add_argument("--show", type=int, default=16)
    p.add_argument("--json", help="also write full id lists to this JSON file")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("sweep", help="grid-search alpha/beta against the edit objective")
    add_edit_args(p)
    p.add_argument("--alpha-range", default="2.0:6.0:0.5", help="start:stop:step")
    p.add_argument("--beta-range", default="0.1:0.2:0.05", help="start:stop:step")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="time retrieval + SVM on a corpus")
    p.add_argument("--corpus")
    p.add_argument("--k", type=int, default=DEFAULT_RETRIEVAL_K)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--json", help="write the full report to this JSON file")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP editing service")
    p.add_argument("--corpus")
    p.add_argument("--channels")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.add_argument("--images-dir", help="directory of corpus images for /api/images/{id}")
    p.add_argument("--cors-origin", help="allowed UI origin (default *)")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load_config(args.config)
        return args.fn(args, config)
    except EditEngineError as exc:
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
