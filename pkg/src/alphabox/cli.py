"""Command-line entry point.

Subcommands ``train``, ``evaluate``, ``attack``, ``benchmark``,
``divergence-check`` and ``gradcheck``. Everything is written under
``--out``: ``metrics.csv`` and ``metrics.json`` hold only quantities that are
a deterministic function of config and seed, wall-clock times go to
``timing.csv``. Exit status is 0 on success, 1 for usage or validation
errors and 2 for runtime failures (including failed checks).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .divergences import run_identity_checks
from .harness.config import ConfigError, ExperimentConfig
from .harness.data import DataError, load_csv_regression
from .harness.experiments import (attack_curves, load_classification, prepare_regression,
                                  run_benchmark_k_sweep, run_classification,
                                  train, uci_protocol)
from .harness.gradcheck import run_gradient_checks
from .harness.training import Checkpoint, evaluate
from .numerics import RngStream
from .uncertainty import write_curve_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alphabox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="64-bit unsigned seed")
        p.add_argument("--out", default=None, help="output directory")
        return p

    p = common(sub.add_parser("train", help="train one model"))
    p.add_argument("--baseline", action="store_true",
                   help="train the deterministic maximum-likelihood baseline (no dropout, K=1)")
    p = common(sub.add_parser("evaluate", help="evaluate a checkpoint on the test data"))
    p.add_argument("--checkpoint", default=None, help="defaults to <out>/checkpoint.bin")
    p = common(sub.add_parser("attack", help="FGS and targeted attack curves for a classifier"))
    p.add_argument("--checkpoint", default=None, help="defaults to <out>/checkpoint.bin")
    p.add_argument("--n-points", type=int, default=1000, help="number of test inputs attacked")
    p = common(sub.add_parser("benchmark", help="K sweep (classification) or split protocol "
                                                "(regression)"))
    p.add_argument("--k-values", default="1,10,100", help="comma-separated K values")
    p = common(sub.add_parser("divergence-check", help="divergence and energy identity checks"),
               needs_config=False)
    p = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"),
               needs_config=False)
    p.add_argument("--n-configs", type=int, default=50)
    return parser


# ---------------------------------------------------------------------------
# output helpers

def write_rows(rows: list[dict], path: Path) -> None:
    """CSV with one header row; every row must have the header's columns."""
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n", extrasaction="raise")
        w.writeheader()
        for r in rows:
            if set(r) != set(cols):
                raise ValueError(f"inconsistent columns in {path.name}")
            w.writerow(r)


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.output_dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg.validate()


def _checkpoint_path(args, out: Path) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands: each returns a callable doing the (runtime) work so that
# validation failures and runtime failures map to different exit codes

def cmd_train(args):
    cfg = _load_config(args)
    if args.baseline and cfg.task != "classification":
        raise ConfigError("--baseline applies to classification configs")
    out = _out_dir(args, cfg)

    def run():
        if args.baseline:
            ckpt, log, metrics = run_classification(load_classification(cfg), cfg,
                                                    eval_each_epoch=True, deterministic=True)
        else:
            ckpt, log, metrics = train(cfg)
        ckpt.save(out / "checkpoint.bin")
        write_rows(log.rows, out / "metrics.csv")
        write_rows([{"epoch": r["epoch"], "wall_seconds": s} for r, s in zip(log.rows, log.wall_seconds)],
                   out / "timing.csv")
        write_json({"command": "train", "config_digest": cfg.digest(), "seed": cfg.seed,
                    "baseline": bool(args.baseline), "metrics": metrics}, out / "metrics.json")
        (out / "config.json").write_text(cfg.to_json() + "\n")
        return EXIT_OK
    return run


def _regression_test_data(cfg, split: int):
    X, y = load_csv_regression(cfg.dataset.path)
    return prepare_regression(X, y, cfg.split.seed + split, cfg.split.test_fraction)


def cmd_evaluate(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    path = _checkpoint_path(args, out)

    def run():
        ckpt = Checkpoint.load(path)
        rng = RngStream(cfg.seed + 1)
        if cfg.task == "regression":
            split = int(ckpt.metadata.get("split", 0))
            data = _regression_test_data(cfg, split)
            tau = float(ckpt.metadata.get("tau", cfg.objective.tau))
            metrics = evaluate(ckpt.model, data.X_test, data.y_test, cfg.K_test, "regression", rng,
                               tau, data.y_std)
        else:
            data = load_classification(cfg)
            metrics = evaluate(ckpt.model, data.X_test, data.y_test, cfg.K_test, "classification", rng)
        write_rows([metrics], out / "metrics.csv")
        write_json({"command": "evaluate", "config_digest": cfg.digest(), "seed": cfg.seed,
                    "K_test": cfg.K_test, "metrics": metrics}, out / "metrics.json")
        return EXIT_OK
    return run


def cmd_attack(args):
    cfg = _load_config(args)
    if cfg.task != "classification":
        raise ConfigError("attack needs a classification config")
    if args.n_points < 1:
        raise ConfigError("--n-points must be >= 1")
    out = _out_dir(args, cfg)
    path = _checkpoint_path(args, out)

    def run():
        ckpt = Checkpoint.load(path)
        data = load_classification(cfg)
        n = min(args.n_points, data.X_test.shape[0])
        curves = attack_curves(ckpt.model, data.X_test[:n], data.y_test[:n], K_test=10,
                               K_attack=10, seed=cfg.seed)
        plot = out / "plotdata"
        plot.mkdir(exist_ok=True)
        rows = []
        for name, curve in curves.items():
            write_curve_csv(curve, plot / f"{name}.csv")
            rows.extend({"attack": name, **r} for r in curve)
        write_rows(rows, out / "metrics.csv")
        write_json({"command": "attack", "config_digest": cfg.digest(), "seed": cfg.seed,
                    "n_points": n, "curves": curves}, out / "metrics.json")
        return EXIT_OK
    return run


def cmd_benchmark(args):
    cfg = _load_config(args)
    try:
        K_values = [int(k) for k in args.k_values.split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"--k-values must be comma-separated integers, got {args.k_values!r}")
    if not K_values or min(K_values) < 1:
        raise ConfigError("--k-values must be positive")
    out = _out_dir(args, cfg)

    def run():
        if cfg.task == "regression":
            X, y = load_csv_regression(cfg.dataset.path)
            res = uci_protocol(X, y, cfg)
            write_rows(res["per_split"], out / "metrics.csv")
            summary = {k: v for k, v in res.items() if k != "per_split"}
            write_json({"command": "benchmark", "config_digest": cfg.digest(), "seed": cfg.seed,
                        "n_splits": cfg.split.n_splits, "summary": summary}, out / "metrics.json")
            return EXIT_OK
        rows, timing = run_benchmark_k_sweep(cfg, K_values)
        plot = out / "plotdata"
        plot.mkdir(exist_ok=True)
        write_rows(rows, out / "metrics.csv")
        write_rows(rows, plot / "k_sweep.csv")
        write_rows(timing, out / "timing.csv")
        final = {str(K): [r for r in rows if r["K"] == K][-1] for K in K_values}
        write_json({"command": "benchmark", "config_digest": cfg.digest(), "seed": cfg.seed,
                    "K_values": K_values, "final_epoch": final}, out / "metrics.json")
        return EXIT_OK
    return run


def _check_table(args, rows, name):
    out = _out_dir(args, None)
    write_rows(rows, out / "metrics.csv")
    passed = all(r["passed"] for r in rows)
    write_json({"command": name, "seed": args.seed or 0, "passed": passed, "checks": rows},
               out / "metrics.json")
    for r in rows:
        print(",".join(str(r[k]) for k in r))
    return EXIT_OK if passed else EXIT_RUNTIME


def cmd_divergence_check(args):
    seed = 0 if args.seed is None else args.seed
    return lambda: _check_table(args, run_identity_checks(seed), "divergence-check")


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    if args.n_configs < 1:
        raise ConfigError("--n-configs must be >= 1")
    return lambda: _check_table(args, run_gradient_checks(args.n_configs, seed), "gradcheck")


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "attack": cmd_attack,
            "benchmark": cmd_benchmark, "divergence-check": cmd_divergence_check,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        run = COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, FileNotFoundError, ValueError) as e:
        print(f"alphabox: invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run()
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to one exit code
        print(f"alphabox: {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
