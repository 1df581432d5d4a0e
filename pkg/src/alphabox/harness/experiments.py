"""Experiment drivers: single training runs, the UCI split protocol, K sweeps
and adversarial-attack curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..net import Model
from ..numerics import RngStream
from ..uncertainty import detection_curve
from .config import ExperimentConfig
from .data import Standardiser, load_csv_regression, load_idx_images, random_split
from .training import Checkpoint, build_architecture, evaluate, fit, objective_config

DEFAULT_TAU_GRID = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)


@dataclass
class Prepared:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    y_std: float = 1.0
    n_classes: int = 0


def prepare_regression(X, y, split_seed: int, test_fraction: float) -> Prepared:
    """Random split, then standardise inputs and targets with train statistics."""
    tr, te = random_split(X.shape[0], test_fraction, split_seed)
    st = Standardiser.fit(X[tr], y[tr])
    return Prepared(st.x(X[tr]), st.y(y[tr]), st.x(X[te]), st.y(y[te]), st.y_std)


def load_classification(cfg: ExperimentConfig) -> Prepared:
    d = cfg.dataset
    Xtr, ytr = load_idx_images(d.train_images, d.train_labels)
    Xte, yte = load_idx_images(d.test_images, d.test_labels)
    if d.max_train is not None:
        Xtr, ytr = Xtr[:d.max_train], ytr[:d.max_train]
    return Prepared(Xtr, ytr, Xte, yte, 1.0, int(max(ytr.max(), yte.max())) + 1)


def _select_tau(data: Prepared, cfg: ExperimentConfig, grid, seed: int) -> float:
    """Grid-search tau on a 90/10 validation split of the training set."""
    tr, va = random_split(data.X_train.shape[0], 0.1, seed + 7919)
    Xtr, ytr, Xva, yva = data.X_train[tr], data.y_train[tr], data.X_train[va], data.y_train[va]
    arch = build_architecture(Xtr.shape[1], 1, cfg.architecture)
    best, best_nll = None, math.inf
    for tau in grid:
        obj = objective_config(arch, cfg.objective, Xtr.shape[0], "regression", tau)
        params, _ = fit(arch, Xtr, ytr[:, None], obj, cfg.optimiser, seed)
        m = evaluate(Model(params, arch), Xva, yva, cfg.K_test, "regression", RngStream(seed + 1), tau)
        if m["test_nll"] < best_nll:
            best, best_nll = float(tau), m["test_nll"]
    return best


def run_regression_split(X, y, cfg: ExperimentConfig, split_index: int = 0):
    """Train and evaluate one random split; returns ``(checkpoint, log, metrics)``."""
    split_seed = cfg.split.seed + split_index
    data = prepare_regression(X, y, split_seed, cfg.split.test_fraction)
    seed = cfg.seed + 1000 * split_index
    tau = cfg.objective.tau
    if cfg.tau_grid:
        tau = _select_tau(data, cfg, cfg.tau_grid, seed)
    arch = build_architecture(X.shape[1], 1, cfg.architecture)
    obj = objective_config(arch, cfg.objective, data.X_train.shape[0], "regression", tau)
    params, log = fit(arch, data.X_train, data.y_train[:, None], obj, cfg.optimiser, seed)
    model = Model(params, arch)
    metrics = evaluate(model, data.X_test, data.y_test, cfg.K_test, "regression",
                       RngStream(seed + 1), tau, data.y_std)
    metrics.update({"split": split_index, "tau": tau})
    ckpt = Checkpoint(arch, params, {"config_digest": cfg.digest(), "epoch": cfg.optimiser.epochs,
                                     "seed": seed, "tau": tau, "split": split_index})
    return ckpt, log, metrics


def uci_protocol(X, y, cfg: ExperimentConfig) -> dict:
    """Repeat :func:`run_regression_split` over ``cfg.split.n_splits`` random splits.

    Returns per-split metrics and the mean and standard error of test NLL
    and RMSE.
    """
    per_split = [run_regression_split(X, y, cfg, s)[2] for s in range(cfg.split.n_splits)]
    out = {"per_split": per_split}
    for key in ("test_nll", "test_rmse"):
        vals = np.array([m[key] for m in per_split])
        out[key] = float(vals.mean())
        out[key + "_se"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return out


def run_classification(data: Prepared, cfg: ExperimentConfig, eval_each_epoch: bool = False,
                       deterministic: bool = False):
    """Train a classifier; ``deterministic`` gives the maximum-likelihood baseline."""
    arch = build_architecture(data.X_train.shape[1], data.n_classes, cfg.architecture)
    objective = cfg.objective
    if deterministic:
        arch = arch.deterministic()
        objective = replace(objective, K=1)
    obj = objective_config(arch, objective, data.X_train.shape[0], "classification")
    def eval_fn(model, epoch):
        return evaluate(model, data.X_test, data.y_test, cfg.K_test, "classification",
                        RngStream(cfg.seed + 17 + epoch))

    params, log = fit(arch, data.X_train, data.y_train, obj, cfg.optimiser, cfg.seed,
                      eval_fn if eval_each_epoch else None)
    model = Model(params, arch)
    metrics = evaluate(model, data.X_test, data.y_test, cfg.K_test, "classification",
                       RngStream(cfg.seed + 1))
    ckpt = Checkpoint(arch, params, {"config_digest": cfg.digest(), "epoch": cfg.optimiser.epochs,
                                     "seed": cfg.seed, "deterministic": deterministic})
    return ckpt, log, metrics


def train(cfg: ExperimentConfig):
    """Single training run from a validated config: ``(checkpoint, log, metrics)``."""
    if cfg.task == "regression":
        X, y = load_csv_regression(cfg.dataset.path)
        return run_regression_split(X, y, cfg, 0)
    return run_classification(load_classification(cfg), cfg, eval_each_epoch=True)


def run_benchmark_k_sweep(cfg: ExperimentConfig, K_values=(1, 10, 100), data: Prepared | None = None):
    """Identical classification runs differing only in the number of training samples K.

    Returns ``(rows, timing)``: ``rows`` holds the deterministic per-epoch
    metrics ``(K, epoch, train_loss, test_accuracy, test_ll)``; ``timing``
    holds ``(K, epoch, wall_seconds)``.
    """
    if data is None:
        data = load_classification(cfg)
    rows, timing = [], []
    for K in K_values:
        run_cfg = replace(cfg, objective=replace(cfg.objective, K=int(K)))
        _, log, _ = run_classification(data, run_cfg, eval_each_epoch=True)
        elapsed = 0.0
        for r, sec in zip(log.rows, log.wall_seconds):
            elapsed += sec
            rows.append({"K": int(K), "epoch": r["epoch"], "train_loss": r["train_loss"],
                         "test_accuracy": r["test_accuracy"], "test_ll": -r["test_nll"]})
            timing.append({"K": int(K), "epoch": r["epoch"], "wall_seconds": sec,
                           "cumulative_seconds": elapsed})
    return rows, timing


def attack_curves(model: Model, X, y, K_test: int = 10, K_attack: int = 10, seed: int = 0,
                  etas=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), target: int = 0, steps=(0, 10, 20, 30, 40),
                  eta_targeted: float = 0.01) -> dict:
    """FGS sweep over step sizes and targeted sweep over step counts.

    The targeted attack runs on the inputs whose label differs from ``target``.
    """
    fgs = detection_curve(model, X, y, etas, "fgs_untargeted", K_test, K_attack, RngStream(seed))
    keep = np.asarray(y) != target
    tgt = detection_curve(model, X[keep], np.asarray(y)[keep], steps, "targeted_iterative", K_test,
                          K_attack, RngStream(seed + 1), target=target, eta=eta_targeted)
    return {"fgs": fgs, "targeted": tgt}
