"""Command-line surface: synth, train, eval, sweep-dims, sweep-labels, verify, trace.

Every command resolves its configuration up front, writes its outputs with
frozen formatting, and drops a manifest JSON next to them (resolved config,
input digests, output paths, seed, tool version). Rerunning a command with
the same inputs reproduces every output byte for byte.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, ecm, heads, metrics, report
from .errors import EcmSphereError, TrainingDivergedError
from .losses import LOSS_KINDS
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path, command, config, inputs, outputs, seed):
    doc = {
        "tool": "ecmsphere",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _load_ecm(path):
    if path is None:
        return ecm.default_config()
    return ecm.load_config(path)


def _require_file(path):
    if not Path(path).is_file():
        raise EcmSphereError(f"no such file: {path}")


def _parse_kappa(text):
    if text in ("inf", "Inf", "INF"):
        return math.inf
    return float(text)


def _default_jobs():
    env = os.environ.get("ECM_SPHERE_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


# -- commands -----------------------------------------------------------------


def cmd_synth(args):
    cfg = _load_ecm(args.config)
    synth_cfg = data.SynthConfig(
        ecm=cfg,
        n_per_label=args.n,
        d=args.d,
        T=args.T,
        kappa=_parse_kappa(args.kappa),
        distractor_scale=args.distractor_scale,
        seed=args.seed,
    )
    dataset = data.synth_generate(synth_cfg, split=args.split)
    data.save(dataset, args.out)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "synth",
        {
            "n": args.n, "d": args.d, "T": args.T, "kappa": args.kappa,
            "distractor_scale": args.distractor_scale, "split": args.split,
            "ecm_labels": cfg.names,
        },
        [args.config] if args.config else [],
        [args.out],
        args.seed,
    )
    print(f"wrote {args.out} ({len(dataset)} records, d={dataset.d})")
    return EXIT_OK


def _head_config_for(args, d):
    n_heads = args.n_heads
    if d % n_heads != 0:
        raise EcmSphereError(f"n_heads {n_heads} does not divide data dimension {d}")
    d_mlp = args.d_mlp if args.d_mlp else 4 * d
    return heads.default_head_config(d=d, n_heads=n_heads, d_mlp=d_mlp, pooling=args.pooling)


def cmd_train(args):
    _require_file(args.data)
    dataset = data.load(args.data)
    cfg = _load_ecm(args.ecm)
    for name in dataset.label_names:
        cfg.index_of(name)  # raises on mismatch
    head_cfg = _head_config_for(args, dataset.d)
    train_cfg = TrainConfig(
        loss_kind=args.loss,
        head_kind=args.head,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        tau=args.tau,
        margin=args.margin,
    )
    log_path = str(args.out) + ".log.csv"
    try:
        params, log = train(dataset, train_cfg, cfg, head_cfg)
    except TrainingDivergedError as exc:
        if exc.last_good_params is not None:
            heads.save_checkpoint(exc.last_good_params, head_cfg, args.out)
            print(f"divergence at step {exc.step}; last-good checkpoint retained at {args.out}", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    heads.save_checkpoint(params, head_cfg, args.out)
    report.write_csv(log_path, ["step", "epoch", "loss"], log.step_losses)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "train",
        {
            "loss": args.loss, "head": args.head, "lr": args.lr, "epochs": args.epochs,
            "batch": args.batch, "tau": args.tau, "margin": args.margin,
            "pooling": args.pooling, "n_heads": args.n_heads,
            "d_mlp": head_cfg.d_mlp, "final_checksum": log.final_checksum,
        },
        [args.data] + ([args.ecm] if args.ecm else []),
        [args.out, log_path],
        args.seed,
    )
    print(
        f"trained {args.head}/{args.loss}: epochs={args.epochs} "
        f"first-epoch loss={log.epoch_means[0]:.6g} last-epoch loss={log.epoch_means[-1]:.6g}"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def _embed_for_eval(ckpt_path, dataset):
    params, head_cfg = heads.load_checkpoint(ckpt_path)
    if head_cfg.d != dataset.d:
        raise EcmSphereError(
            f"checkpoint dimension {head_cfg.d} != dataset dimension {dataset.d}"
        )
    emb = heads.embed_sequences(params, head_cfg, dataset.sequences)
    return params, head_cfg, emb


def cmd_eval(args):
    _require_file(args.data)
    _require_file(args.ckpt)
    dataset = data.load(args.data)
    cfg = _load_ecm(args.ecm)
    labels = np.array([cfg.index_of(name) for name in dataset.label_names])[dataset.labels]
    _, _, emb = _embed_for_eval(args.ckpt, dataset)
    rep = metrics.evaluate_embeddings(
        emb, labels, cfg, restarts=args.restarts, seed=args.seed, jobs=args.jobs
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "scores.csv"
    report.write_csv(
        scores_path,
        ["metric", "value"],
        [
            ["v_measure", rep.v_measure],
            ["homogeneity", rep.homogeneity],
            ["completeness", rep.completeness],
            ["cd_r", rep.cd_r],
            ["kmeans_inertia", rep.clustering.inertia],
            ["pca_var_ratio_1", rep.pca_variance_ratios[0]],
            ["pca_var_ratio_2", rep.pca_variance_ratios[1]],
        ],
    )
    matrix_path = out_dir / "avgcossim.csv"
    report.write_matrix_csv(matrix_path, cfg.names, rep.avg_cos_sim)
    pca_path = out_dir / "pca.svg"
    mds_path = out_dir / "mds.svg"
    report.svg_scatter(pca_path, rep.projections["pca"], labels, cfg.names, title="pca")
    report.svg_scatter(mds_path, rep.projections["mds"], labels, cfg.names, title="mds")
    _write_manifest(
        out_dir / "manifest.json",
        "eval",
        {"restarts": args.restarts},
        [args.data, args.ckpt] + ([args.ecm] if args.ecm else []),
        [scores_path, matrix_path, pca_path, mds_path],
        args.seed,
    )
    print(f"v_measure={rep.v_measure:.6g} cd_r={rep.cd_r:.6g}")
    print(f"wrote {scores_path}")
    return EXIT_OK


def cmd_sweep_dims(args):
    _require_file(args.data)
    _require_file(args.ckpt)
    dataset = data.load(args.data)
    _, _, emb = _embed_for_eval(args.ckpt, dataset)
    labels = dataset.labels
    k = len(dataset.label_names)
    dims = [int(tok) for tok in args.dims.split(",") if tok.strip()]

    def score_dim(dim):
        if dim > emb.shape[1] or dim < 1:
            return [dim, "skipped"]
        reduced = metrics.pca_reduce_for_clustering(emb, dim)
        clustering = metrics.spherical_kmeans(reduced, k=k, restarts=args.restarts, seed=args.seed)
        return [dim, metrics.v_measure(labels, clustering.assignments)["v"]]

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(score_dim, dims))
    else:
        rows = [score_dim(dim) for dim in dims]
    for row in rows:
        if row[1] == "skipped":
            print(f"warning: dim {row[0]} outside [1, {emb.shape[1]}], skipped", file=sys.stderr)
    report.write_csv(args.out, ["dim", "v_measure"], rows)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "sweep-dims",
        {"dims": dims, "restarts": args.restarts},
        [args.data, args.ckpt],
        [args.out],
        args.seed,
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sweep_labels(args):
    series = [tok for tok in args.ecm_series.split(",") if tok.strip()]
    for path in series:
        _require_file(path)
    rows = []
    for path in series:
        cfg = ecm.load_config(path)
        synth_cfg = data.SynthConfig(
            ecm=cfg, n_per_label=args.n, d=args.d, T=args.T,
            kappa=_parse_kappa(args.kappa), distractor_scale=args.distractor_scale,
            seed=args.seed,
        )
        train_ds = data.synth_generate(synth_cfg, "train")
        test_ds = data.synth_generate(synth_cfg, "test")
        head_cfg = _head_config_for(args, args.d)
        test_labels = test_ds.labels
        for loss_kind in LOSS_KINDS:
            train_cfg = TrainConfig(
                loss_kind=loss_kind, head_kind=args.head, learning_rate=args.lr,
                epochs=args.epochs, batch_size=args.batch, seed=args.seed,
                tau=args.tau, margin=args.margin,
            )
            params, _ = train(train_ds, train_cfg, cfg, head_cfg)
            emb = heads.embed_sequences(params, head_cfg, test_ds.sequences)
            clustering = metrics.spherical_kmeans(emb, k=cfg.E, restarts=args.restarts, seed=args.seed)
            scores = metrics.v_measure(test_labels, clustering.assignments)
            rows.append([cfg.E, loss_kind, scores["v"]])
            print(f"E={cfg.E} loss={loss_kind}: v={scores['v']:.4f}")
    report.write_csv(args.out, ["E", "loss", "v_measure"], rows)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "sweep-labels",
        {
            "series": series, "head": args.head, "epochs": args.epochs, "lr": args.lr,
            "n": args.n, "d": args.d, "T": args.T, "kappa": args.kappa,
        },
        series,
        [args.out],
        args.seed,
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_verify(args):
    if args.check != "sincere-simplex":
        raise EcmSphereError(f"unknown check {args.check!r}")
    rep = metrics.theory_check_sincere_simplex(
        args.E, args.d, tau=args.tau, steps=args.steps, lr=args.lr, seed=args.seed
    )
    off = ~np.eye(args.E, dtype=bool)
    sims = rep.sims[off]
    print(f"check=sincere-simplex E={args.E} d={args.d} tau={args.tau}")
    print(f"target pairwise similarity: {rep.target:.6f}")
    print(f"mean pairwise similarity:   {float(sims.mean()):.6f}")
    print(f"max deviation from target:  {rep.max_deviation:.6f}")
    if args.E <= 8:
        print("pairwise similarities (deviation from target):")
        for i in range(args.E):
            for j in range(i + 1, args.E):
                value = rep.sims[i, j]
                print(f"  ({i},{j}) {value:+.6f}  (dev {value - rep.target:+.6f})")
    print(f"objective value:            {rep.loss:.6f}")
    print(f"analytic optimum:           {rep.lower_bound:.6f}")
    print(f"simplex feasible (d >= E-1): {rep.feasible}")
    print(f"converged within +/-0.02:    {rep.converged}")
    if args.out:
        report.write_matrix_csv(args.out, [f"c{i}" for i in range(args.E)], rep.sims)
        _write_manifest(
            str(args.out) + ".manifest.json",
            "verify",
            {"check": args.check, "E": args.E, "d": args.d, "tau": args.tau, "steps": args.steps, "lr": args.lr},
            [],
            [args.out],
            args.seed,
        )
    if not rep.feasible:
        print("note: d < E-1, the regular simplex cannot be represented", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_trace(args):
    _require_file(args.data)
    _require_file(args.ckpt)
    dataset = data.load(args.data)
    params, head_cfg = heads.load_checkpoint(args.ckpt)
    if head_cfg.d != dataset.d:
        raise EcmSphereError(
            f"checkpoint dimension {head_cfg.d} != dataset dimension {dataset.d}"
        )
    # deterministic subset: first per-label records in file order
    chosen = []
    seen = {}
    for idx, rec in enumerate(dataset.records):
        if seen.get(rec.label_index, 0) < args.per_label:
            chosen.append(idx)
            seen[rec.label_index] = seen.get(rec.label_index, 0) + 1
    labels = dataset.labels[chosen]
    pooled_stages = {name: [] for name in ("input", "post_attn", "mlp_module", "final")}
    for idx in chosen:
        trace = heads.forward_with_trace(params, dataset.records[idx].token_states, head_cfg)
        for name, states in trace.stage_items():
            pooled_stages[name].append(heads.pool_and_embed(states, head_cfg.pooling))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, rows in pooled_stages.items():
        coords = metrics.mds_project(np.array(rows), 2)
        path = out_dir / f"{name}.svg"
        # no embedded title: identical stages must produce identical bytes
        report.svg_scatter(path, coords, labels, dataset.label_names)
        outputs.append(path)
    _write_manifest(
        out_dir / "manifest.json",
        "trace",
        {"per_label": args.per_label},
        [args.data, args.ckpt],
        outputs,
        0,
    )
    print(f"wrote {len(outputs)} stage plots to {out_dir}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ecmsphere",
        description="Train and evaluate circular emotion geometry on the unit hypersphere.",
        epilog=(
            "Output schemas (frozen): train log CSV 'step,epoch,loss'; eval scores.csv "
            "'metric,value' with rows v_measure, homogeneity, completeness, cd_r, "
            "kmeans_inertia, pca_var_ratio_1, pca_var_ratio_2; avgcossim.csv is the E x E "
            "label matrix with a leading label column; sweep CSVs are 'dim,v_measure' and "
            "'E,loss,v_measure'. Exit codes: 0 ok, 2 usage/config, 3 numerical failure."
        ),
    )
    parser.add_argument("--jobs", type=int, default=_default_jobs(),
                        help="parallel work items where supported (env ECM_SPHERE_JOBS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--config", default=None, help="circle config JSON (default: built-in 12 labels)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100, help="samples per label")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--T", type=int, default=1, help="tokens per record")
    p.add_argument("--kappa", default="50", help="concentration, or 'inf' for noise-free")
    p.add_argument("--distractor-scale", type=float, default=1.0)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a projection head")
    p.add_argument("--data", required=True)
    p.add_argument("--head", choices=("gpt", "ngpt"), default="ngpt")
    p.add_argument("--loss", choices=LOSS_KINDS, default="sincere")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--ecm", default=None)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pooling", choices=heads.POOLINGS, default="mean")
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-mlp", type=int, default=0, help="MLP width (default 4*d)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="embed a dataset through a checkpoint and score it")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ecm", default=None)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-dims", help="V-Measure after PCA reduction to each dimension")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dims", required=True, help="comma-separated dimensions")
    p.add_argument("--out", required=True)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_sweep_dims)

    p = sub.add_parser("sweep-labels", help="synthesize, train and score per circle config")
    p.add_argument("--ecm-series", required=True, help="comma-separated config paths")
    p.add_argument("--out", required=True)
    p.add_argument("--head", choices=("gpt", "ngpt"), default="ngpt")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--kappa", default="50")
    p.add_argument("--distractor-scale", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pooling", choices=heads.POOLINGS, default="mean")
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-mlp", type=int, default=0)
    p.set_defaults(func=cmd_sweep_labels)

    p = sub.add_parser("verify", help="numerical checks of analytic optima")
    p.add_argument("--check", default="sincere-simplex")
    p.add_argument("--E", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional CSV of final pairwise similarities")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trace", help="MDS plots of intermediate block stages")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-label", type=int, default=40)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EcmSphereError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
