"""Finite-difference oracle for the analytic gradient of the training energy."""
from __future__ import annotations

import numpy as np

from ..net import MLPArchitecture, ParameterSet, init_params
from ..numerics import RngStream
from ..objective import AlphaObjectiveConfig, total_objective

ALPHAS = (0.0, 0.3, 0.5, 1.0, 2.0)


def finite_difference_grad(f, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def random_problem(rng: RngStream, alpha: float):
    """A random small network, batch and objective configuration."""
    n_layers = int(rng.integers(3)) + 1
    widths = [int(w) + 1 for w in rng.integers(6, size=n_layers + 1)]
    task = "softmax" if rng.uniform(()) < 0.5 else "gaussian"
    if task == "softmax":
        widths[-1] = max(widths[-1], 2)
    acts = ["relu" if rng.uniform(()) < 0.7 else "identity" for _ in range(n_layers - 1)]
    rates = [float(r) for r in rng.uniform(n_layers) * 0.6]
    arch = MLPArchitecture(widths, acts, rates)
    params = init_params(arch, rng)
    params = ParameterSet(params.weights, [0.3 * rng.normal(b.shape) for b in params.biases])
    M = int(rng.integers(4)) + 1
    K = int(rng.integers(5)) + 1
    X = rng.normal((M, widths[0]))
    if task == "softmax":
        y = rng.integers(widths[-1], size=M)
    else:
        y = rng.normal((M, widths[-1]))
    cfg = AlphaObjectiveConfig(alpha=alpha, K=K, tau=float(0.5 + rng.uniform(())), N=10,
                               layer_reg=[float(c) for c in rng.uniform(n_layers)],
                               likelihood=task)
    return arch, params, (X, y), cfg


def check_total_objective(arch, params, batch, cfg, seed: int, step: float = 1e-6) -> float:
    """Relative error between analytic and central-difference gradients.

    The same seed is used for every evaluation, so all of them see the
    same dropout masks.
    """
    _, grads = total_objective(params, arch, batch, cfg, RngStream(seed))
    theta = params.flatten()

    def f(t):
        return total_objective(ParameterSet.unflatten(t, arch), arch, batch, cfg, RngStream(seed))[0]

    return relative_error(grads.flatten(), finite_difference_grad(f, theta, step))


def run_gradient_checks(n_configs: int = 50, seed: int = 0, tol: float = 1e-5) -> list[dict]:
    rng = RngStream(seed)
    rows = []
    for i in range(n_configs):
        alpha = ALPHAS[i % len(ALPHAS)]
        arch, params, batch, cfg = random_problem(rng, alpha)
        err = check_total_objective(arch, params, batch, cfg, seed + i)
        rows.append({"case": i, "alpha": alpha, "likelihood": cfg.likelihood,
                     "widths": "-".join(map(str, arch.layer_widths)), "M": batch[0].shape[0],
                     "K": cfg.K, "rel_error": err, "passed": bool(err < tol)})
    return rows
