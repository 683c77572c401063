"""Command-line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .datasets import (
    REFERENCE_STATS,
    compare_stats,
    dataset_stats,
    fingerprint,
    load_any,
    save_dataset_dir,
)
from .errors import NumericalError, TrainingError, ValidationError
from .gradcheck import run_gradcheck
from .model import PoolingConfig, cluster_schedule, load_checkpoint, save_checkpoint
from .train import (
    TrainConfig,
    curves_csv,
    evaluate,
    kfold_cv,
    metrics_json,
    metrics_table,
    train,
    write_atomic,
)
from .transactions import (
    build_corpus_dataset,
    merge_multi_edges,
    parse_tx_csv,
    read_targets,
    synth_tx_corpus,
    write_targets,
    write_tx_csv,
)

log = logging.getLogger("mcgc")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for I/O errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _default_seed() -> int:
    return int(os.environ.get("MCGC_SEED", "0"))


def _add_model_flags(p):
    p.add_argument("--dim", type=int, default=64, help="hidden feature dimension d")
    p.add_argument("--layers", type=int, default=3, help="pooling layers L")
    p.add_argument("--hops", type=int, default=3, help="propagation steps K per block")
    p.add_argument("--clusters", type=str, default=None,
                   help="comma-separated cluster sizes; default shrinks the largest graph by 4x per layer")
    p.add_argument("--entropy-coeff", type=float, default=1.0)


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=None, help="defaults to $MCGC_SEED or 0")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--batch-size", type=int, default=1, help="graphs per optimiser step")


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="dataset directory (JSON manifest or TU text files)")
    p.add_argument("--name", default=None, help="TU dataset name (defaults to the directory name)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcgc", description="Multi-channel hierarchical pooling graph classifier.")
    parser.add_argument("--version", action="version", version=f"mcgc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="transaction CSV + target list -> dataset directory")
    p.add_argument("--tx", required=True, help="CSV with from,to,amount,timestamp")
    p.add_argument("--targets", required=True, help="CSV with address,label")
    p.add_argument("--out", required=True)
    p.add_argument("--k-order", type=int, default=4)
    p.add_argument("--edge-weights", choices=["binary", "log-amount"], default="binary")
    p.add_argument("--max-nodes", type=int, default=1000)
    p.add_argument("--dataset-name", default="ethereum")

    p = sub.add_parser("synth", help="generate a synthetic labelled transaction corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-phishing", type=int, default=100)
    p.add_argument("--n-normal", type=int, default=100)
    p.add_argument("--k-order", type=int, default=4)
    p.add_argument("--edge-weights", choices=["binary", "log-amount"], default="binary")
    p.add_argument("--max-nodes", type=int, default=1000)

    p = sub.add_parser("train", help="train on a whole dataset and save a checkpoint")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--from-manifest", default=None,
                   help="rerun using the config snapshot of an earlier run manifest")

    p = sub.add_parser("sweep", help="cross-validate every (lr, dim) pair of a grid")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--lr-grid", default="0.1,0.01,0.001")
    p.add_argument("--dim-grid", default="32,64,128,256,512")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--graphs", type=int, default=20)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("stats", help="dataset statistics, compared with published values when known")
    _add_data_flags(p)
    return parser


def _pooling_config(args, ds) -> PoolingConfig:
    if args.clusters:
        sizes = tuple(int(x) for x in args.clusters.split(","))
    else:
        sizes = cluster_schedule(ds.max_nodes, args.layers)
    return PoolingConfig(
        layers=args.layers, hops=args.hops, dim=args.dim, cluster_sizes=sizes,
        entropy_coeff=args.entropy_coeff,
    )


def _train_config(args, **kw) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, seed=args.seed, optimizer=args.optimizer,
        batch_size=args.batch_size, **kw,
    )


def _write_run_manifest(out: Path, command: str, config: dict, seed: int, ds, artifacts: dict, t0: float):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "dataset": {"name": ds.name, "fingerprint": fingerprint(ds)} if ds is not None else None,
        "artifacts": artifacts,
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    write_atomic(out / "run_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_ingest(args, t0):
    parsed = parse_tx_csv(args.tx)
    targets = read_targets(args.targets)
    ds = build_corpus_dataset(
        parsed.records, targets, k=args.k_order, name=args.dataset_name,
        edge_weights=args.edge_weights, max_nodes=args.max_nodes,
    )
    out = save_dataset_dir(ds, args.out)
    print(f"{len(ds)} pattern graphs written to {out} ({len(parsed.records)} records, {parsed.dropped} dropped)")
    _write_run_manifest(out, "ingest", {k: v for k, v in vars(args).items() if k != "func"},
                        None, ds, {"dataset": str(out)}, t0)
    return EXIT_OK


def cmd_synth(args, t0):
    seed = _default_seed() if args.seed is None else args.seed
    records, targets = synth_tx_corpus(seed, args.n_phishing, args.n_normal)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tx_csv(out / "transactions.csv", records)
    write_targets(out / "targets.csv", targets)
    ds = build_corpus_dataset(records, targets, k=args.k_order, name="synthetic-ethereum",
                              edge_weights=args.edge_weights, max_nodes=args.max_nodes)
    save_dataset_dir(ds, out / "dataset")
    print(f"{len(records)} records, {len(targets)} targets, dataset in {out / 'dataset'}")
    _write_run_manifest(out, "synth", {k: v for k, v in vars(args).items() if k != "func"}, seed, ds,
                        {"transactions": "transactions.csv", "targets": "targets.csv", "dataset": "dataset"}, t0)
    return EXIT_OK


def cmd_train(args, t0):
    ds = load_any(args.data, args.name)
    pcfg = _pooling_config(args, ds)
    cfg = _train_config(args)
    params, metrics = train(ds, cfg, pcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.npz", params, pcfg,
                    extra={"num_classes": ds.num_classes, "num_features": ds.num_features})
    config = {"train": asdict(cfg), "pooling": asdict(pcfg)}
    write_atomic(out / "metrics.json", metrics_json(metrics, {"config": config}))
    write_atomic(out / "metrics.txt", metrics_table(metrics))
    write_atomic(out / "curves.csv", curves_csv(metrics))
    write_atomic(out / "timing.json", json.dumps(metrics.timing(), indent=2) + "\n")
    print(metrics_table(metrics), end="")
    print(f"mean epoch time {metrics.timing()['mean_epoch_seconds']:.3f}s")
    _write_run_manifest(out, "train", config, cfg.seed, ds,
                        {"checkpoint": "model.npz", "metrics": "metrics.json"}, t0)
    return EXIT_OK


def _cv_configs(args, ds):
    if args.from_manifest:
        with open(args.from_manifest, encoding="utf-8") as fh:
            snap = json.load(fh)["config"]
        return TrainConfig(**snap["train"]), PoolingConfig(**snap["pooling"])
    return _train_config(args, folds=args.folds, jobs=args.jobs), _pooling_config(args, ds)


def cmd_cv(args, t0):
    ds = load_any(args.data, args.name)
    cfg, pcfg = _cv_configs(args, ds)
    metrics = kfold_cv(ds, cfg, pcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"train": asdict(cfg), "pooling": asdict(pcfg)}
    write_atomic(out / "metrics.json", metrics_json(metrics, {"config": config}))
    write_atomic(out / "metrics.txt", metrics_table(metrics))
    write_atomic(out / "curves.csv", curves_csv(metrics))
    write_atomic(out / "timing.json", json.dumps(metrics.timing(), indent=2) + "\n")
    print(metrics_table(metrics), end="")
    print(f"mean epoch time {metrics.timing()['mean_epoch_seconds']:.3f}s")
    _write_run_manifest(out, "cv", config, cfg.seed, ds,
                        {"metrics": "metrics.json", "table": "metrics.txt", "curves": "curves.csv"}, t0)
    return EXIT_OK


def cmd_sweep(args, t0):
    ds = load_any(args.data, args.name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for lr in (float(x) for x in args.lr_grid.split(",")):
        for dim in (int(x) for x in args.dim_grid.split(",")):
            args.lr, args.dim = lr, dim
            m = kfold_cv(ds, _train_config(args, folds=args.folds), _pooling_config(args, ds))
            rows.append({"lr": lr, "dim": dim, "mean_accuracy": m.mean_accuracy, "std_accuracy": m.std_accuracy})
            print(f"lr={lr:<8g} dim={dim:<4d} accuracy {m.mean_accuracy:.6f} +/- {m.std_accuracy:.6f}")
    best = max(rows, key=lambda r: r["mean_accuracy"])
    write_atomic(out / "sweep.json", json.dumps({"grid": rows, "best": best}, indent=2, sort_keys=True) + "\n")
    _write_run_manifest(out, "sweep", {k: v for k, v in vars(args).items() if k != "func"},
                        args.seed, ds, {"sweep": "sweep.json"}, t0)
    return EXIT_OK


def cmd_eval(args, t0):
    ds = load_any(args.data, args.name)
    params, pcfg, _ = load_checkpoint(args.checkpoint)
    acc = evaluate(ds, params, pcfg)
    print(f"accuracy {acc:.6f} on {len(ds)} graphs")
    return EXIT_OK


def cmd_gradcheck(args, t0):
    seed = _default_seed() if args.seed is None else args.seed
    res = run_gradcheck(seed=seed, n_graphs=args.graphs, dim=args.dim, layers=args.layers, eps=args.eps)
    for row in res.per_graph:
        print(f"graph {row['graph']:>3}  nodes {row['nodes']:>3}  max rel err {row['max_relative_error']:.3e}  ({row['parameter']})")
    ok = res.passed(args.tol)
    print(f"max relative error {res.max_relative_error:.3e} ({res.worst_parameter}) -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_stats(args, t0):
    ds = load_any(args.data, args.name)
    st = dataset_stats(ds)
    print(f"{ds.name}: graphs {st.num_graphs}  classes {st.num_classes}  "
          f"mean nodes {st.mean_nodes:.4f}  mean edges {st.mean_edges:.4f}")
    expected = REFERENCE_STATS.get(ds.name)
    if expected is None:
        return EXIT_OK
    ok_all = True
    for check, observed, exp, ok in compare_stats(st, expected):
        ok_all &= ok
        print(f"  {check:<11} observed {observed:<10.4f} expected {exp:<10} {'ok' if ok else 'MISMATCH'}")
    return EXIT_OK if ok_all else EXIT_INVALID


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "cv": cmd_cv,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "stats": cmd_stats,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", "absent") is None:
        args.seed = _default_seed()
    t0 = time.perf_counter()
    try:
        return COMMANDS[args.command](args, t0)
    except (ValidationError, NumericalError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(dispatch())
