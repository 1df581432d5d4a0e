"""MC-dropout prediction, predictive entropy and gradient-sign attacks."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .net import Model, forward_with_masks, input_gradient, sample_masks
from .numerics import DTYPE, RngStream, log_softmax, log_sum_exp

LOG_2PI = float(np.log(2.0 * np.pi))
CURVE_COLUMNS = ("sweep_value", "accuracy", "mean_entropy", "n_points")
CHUNK = 500


@dataclass
class PredictiveSummary:
    """MC predictive for a batch of inputs.

    For classification ``mean_probs`` is ``(M, C)`` and ``entropy`` is the
    entropy of that averaged vector. For regression ``mean_probs`` holds the
    predictive mean ``(M, D)`` and ``entropy`` is ``None``. ``loglik`` is
    ``log (1/K) sum_k p(y | x, w_k)`` per point when targets were given.
    """

    mean_probs: np.ndarray
    entropy: np.ndarray | None
    loglik: np.ndarray | None
    K_test: int
    samples: np.ndarray | None = None


@dataclass
class AttackConfig:
    kind: str = "fgs_untargeted"
    eta: float = 0.1
    steps: int = 1
    target_class: int = 0
    clip: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("fgs_untargeted", "targeted_iterative"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.kind == "targeted_iterative" and self.steps < 1:
            raise ValueError("targeted attack needs steps >= 1")


def _mc_logits(model: Model, X, K: int, rng: RngStream) -> np.ndarray:
    if model.is_deterministic:
        K = 1
    out = []
    for start in range(0, X.shape[0], CHUNK):
        xb = X[start:start + CHUNK]
        masks = sample_masks(model.arch, xb.shape[0], K, rng)
        logits, _ = forward_with_masks(model.params, model.arch, xb, masks, K)
        out.append(logits)
    return np.concatenate(out, axis=0)


def predictive_entropy(mean_probs) -> np.ndarray | float:
    """Shannon entropy in nats with ``0 log 0 = 0``; works row-wise on 2-D input."""
    p = np.asarray(mean_probs, dtype=DTYPE)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def mc_predict(params, arch, X, K_test: int, rng: RngStream, y=None,
               task: str = "classification", tau: float = 1.0,
               keep_samples: bool = False) -> PredictiveSummary:
    """Average ``K_test`` stochastic forward passes per input.

    Inputs are processed in chunks of 500 rows; masks are drawn chunk by
    chunk in that order.
    """
    if K_test < 1:
        raise ValueError("K_test must be >= 1")
    model = Model(params, arch)
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim == 1:
        X = X[None, :]
    logits = _mc_logits(model, X, K_test, rng)
    K = logits.shape[1]
    if task == "classification":
        logp = log_softmax(logits, axis=-1)
        log_mean = log_sum_exp(logp, axis=1) - np.log(K)
        mean_probs = np.exp(log_mean)
        mean_probs /= mean_probs.sum(axis=1, keepdims=True)
        loglik = None
        if y is not None:
            loglik = log_mean[np.arange(X.shape[0]), np.asarray(y, dtype=np.int64)]
        return PredictiveSummary(mean_probs, predictive_entropy(mean_probs), loglik, K_test,
                                 np.exp(logp) if keep_samples else None)
    if task != "regression":
        raise ValueError(f"unknown task {task!r}")
    loglik = None
    if y is not None:
        yy = np.asarray(y, dtype=DTYPE).reshape(X.shape[0], -1)
        D = yy.shape[1]
        lp = -0.5 * tau * np.sum((yy[:, None, :] - logits) ** 2, axis=2) + 0.5 * D * (np.log(tau) - LOG_2PI)
        loglik = log_sum_exp(lp, axis=1) - np.log(K)
    return PredictiveSummary(logits.mean(axis=1), None, loglik, K_test,
                             logits if keep_samples else None)


def _log_mean_prob_grad(model: Model, X, classes, K: int, rng: RngStream) -> np.ndarray:
    """Input gradient of ``log (1/K) sum_k p(class | x, w_k)`` under fixed masks."""
    if model.is_deterministic:
        K = 1
    masks = sample_masks(model.arch, X.shape[0], K, rng)
    logits, _ = forward_with_masks(model.params, model.arch, X, masks, K)
    logp = log_softmax(logits, axis=-1)
    rows = np.arange(X.shape[0])
    lpc = logp[rows, :, classes]  # (M, K)
    w = np.exp(lpc - log_sum_exp(lpc, axis=1)[:, None])
    onehot = np.zeros_like(logp)
    onehot[rows, :, classes] = 1.0
    dlogits = w[:, :, None] * (onehot - np.exp(logp))
    return input_gradient(model.params, model.arch, X, masks, dlogits)


def _predicted_class(model: Model, X, K: int, rng: RngStream) -> np.ndarray:
    logits = _mc_logits(model, X, K, rng)
    log_mean = log_sum_exp(log_softmax(logits, axis=-1), axis=1)
    # argmax returns the lowest index among ties
    return np.argmax(log_mean, axis=1)


def fgs_untargeted(model: Model, x, eta: float, K_attack: int, rng: RngStream,
                   clip=(0.0, 1.0)) -> np.ndarray:
    """One fast-gradient-sign step away from the currently predicted class.

    ``x - eta * sign(grad_x log p_bar(y* | x))`` with ``y*`` the argmax of
    the MC-averaged probabilities; masks are held fixed for the gradient.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    X = np.asarray(x, dtype=DTYPE)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if eta == 0:
        return X[0].copy() if single else X.copy()
    y_star = _predicted_class(model, X, K_attack, rng)
    g = _log_mean_prob_grad(model, X, y_star, K_attack, rng)
    x_adv = np.clip(X - eta * np.sign(g), clip[0], clip[1])
    return x_adv[0] if single else x_adv


def targeted_iterative(model: Model, x, target: int, eta: float = 0.01, steps: int = 40,
                       K_attack: int = 10, rng: RngStream | None = None,
                       clip=(0.0, 1.0)) -> np.ndarray:
    """Iterated signed-gradient ascent on ``log p_bar(target | x)``.

    Returns the whole trajectory with shape ``(steps + 1, ...)``; entry 0 is
    the clean input. Fresh masks are drawn at every step.
    """
    if rng is None:
        rng = RngStream(0)
    X = np.asarray(x, dtype=DTYPE)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not 0 <= target < model.arch.d_out:
        raise ValueError(f"target class {target} out of range")
    classes = np.full(X.shape[0], target, dtype=np.int64)
    traj = [X.copy()]
    cur = X.copy()
    for _ in range(steps):
        g = _log_mean_prob_grad(model, cur, classes, K_attack, rng)
        cur = np.clip(cur + eta * np.sign(g), clip[0], clip[1])
        traj.append(cur)
    traj = np.stack(traj)
    return traj[:, 0] if single else traj


def _evaluate(model: Model, X, y, K_test, rng):
    summ = mc_predict(model.params, model.arch, X, K_test, rng)
    acc = float(np.mean(np.argmax(summ.mean_probs, axis=1) == np.asarray(y)))
    return acc, float(np.mean(summ.entropy))


def detection_curve(model: Model, X, y, sweep, kind: str = "fgs_untargeted", K_test: int = 10,
                    K_attack: int = 10, rng: RngStream | None = None, target: int = 0,
                    eta: float = 0.01) -> list[dict]:
    """Accuracy and mean predictive entropy along an attack sweep.

    For ``fgs_untargeted`` the sweep values are step sizes; for
    ``targeted_iterative`` they are step counts (with fixed ``eta``).
    """
    if rng is None:
        rng = RngStream(0)
    X = np.asarray(X, dtype=DTYPE)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("empty evaluation set")
    attack_rng, eval_rng = rng.spawn(2)
    rows = []
    if kind == "fgs_untargeted":
        for value in sweep:
            x_adv = fgs_untargeted(model, X, float(value), K_attack, attack_rng)
            acc, ent = _evaluate(model, x_adv, y, K_test, eval_rng)
            rows.append({"sweep_value": float(value), "accuracy": acc, "mean_entropy": ent,
                         "n_points": int(X.shape[0])})
    elif kind == "targeted_iterative":
        steps = [int(v) for v in sweep]
        traj = targeted_iterative(model, X, target, eta, max(steps), K_attack, attack_rng)
        for s in steps:
            acc, ent = _evaluate(model, traj[s], y, K_test, eval_rng)
            rows.append({"sweep_value": float(s), "accuracy": acc, "mean_entropy": ent,
                         "n_points": int(X.shape[0])})
    else:
        raise ValueError(f"unknown attack kind {kind!r}")
    return rows


def write_curve_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in CURVE_COLUMNS})
