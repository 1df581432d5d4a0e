"""Black-box alpha training losses for dropout networks.

Per data point the loss is ``-(1/alpha) * (logsumexp_k(alpha * ll_k) - log K)``
where ``ll_k`` is the log-likelihood under the k-th stochastic forward pass.
For ``|alpha|`` below :data:`ALPHA_SWITCH` the exact ``alpha -> 0`` limit
(mean negative log-likelihood, i.e. dropout VI) is used instead, which
avoids cancellation in ``(1/alpha) * logsumexp(alpha * x)``.

Losses are summed over data points. :func:`total_objective` rescales a
mini-batch sum by ``N / M`` and adds the L2 term once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import MLPArchitecture, ParameterSet, backward_params, forward_stochastic
from .numerics import DTYPE, RngStream, log_softmax, log_sum_exp

ALPHA_SWITCH = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class AlphaObjectiveConfig:
    """Hyper-parameters of the training energy.

    ``layer_reg`` holds one coefficient per weight layer; the default used by
    the harness is ``keep_prob_i * weight_decay``. ``likelihood`` is either
    ``"softmax"`` (classification) or ``"gaussian"`` (regression with
    observation precision ``tau``).
    """

    alpha: float = 0.5
    K: int = 10
    tau: float = 1.0
    N: int = 1
    layer_reg: list[float] = field(default_factory=list)
    include_likelihood_constant: bool = True
    likelihood: str = "softmax"

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if int(self.K) < 1:
            raise ValueError("K must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        if any(c < 0 for c in self.layer_reg):
            raise ValueError("layer_reg must be non-negative")
        if self.likelihood not in ("softmax", "gaussian"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        self.K = int(self.K)
        self.N = int(self.N)
        self.layer_reg = [float(c) for c in self.layer_reg]


def _is_vi(alpha: float) -> bool:
    return abs(alpha) < ALPHA_SWITCH


def _check_ll(ll, K):
    ll = np.asarray(ll, dtype=DTYPE)
    if ll.ndim != 2:
        raise ValueError("expected an (M, K) matrix of log-likelihoods")
    if K is not None and ll.shape[1] != K:
        raise ValueError(f"K={K} does not match {ll.shape[1]} samples")
    if ll.shape[1] < 1:
        raise ValueError("K must be >= 1")
    return ll


def alpha_pointwise(ll, alpha: float) -> np.ndarray:
    """Per-point BB-alpha loss from an ``(M, K)`` matrix of log-likelihoods."""
    ll = np.asarray(ll, dtype=DTYPE)
    K = ll.shape[1]
    if _is_vi(alpha):
        return -ll.mean(axis=1)
    return -(log_sum_exp(alpha * ll, axis=1) - np.log(K)) / alpha


def alpha_pointwise_grad(ll, alpha: float) -> np.ndarray:
    """d(per-point loss)/d ll: minus the softmax over samples of ``alpha * ll``."""
    ll = np.asarray(ll, dtype=DTYPE)
    M, K = ll.shape
    if _is_vi(alpha):
        return np.full((M, K), -1.0 / K)
    z = alpha * ll
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return -w / w.sum(axis=1, keepdims=True)


def classification_loss(mc_log_probs_true, alpha: float, K: int | None = None) -> float:
    """Summed BB-alpha loss given log p(true class) for every (point, sample)."""
    ll = _check_ll(mc_log_probs_true, K)
    if np.any(ll > 0):
        raise ValueError("log-probabilities must be <= 0")
    return float(alpha_pointwise(ll, alpha).sum())


def classification_loss_grad(mc_log_probs_true, alpha: float, K: int | None = None) -> np.ndarray:
    ll = _check_ll(mc_log_probs_true, K)
    if np.any(ll > 0):
        raise ValueError("log-probabilities must be <= 0")
    return alpha_pointwise_grad(ll, alpha)


def _gaussian_ll(mc_preds, y, tau, include_constant):
    mc_preds = np.asarray(mc_preds, dtype=DTYPE)
    y = np.asarray(y, dtype=DTYPE)
    if y.ndim == 1:
        y = y[:, None]
    if mc_preds.ndim != 3 or mc_preds.shape[0] != y.shape[0] or mc_preds.shape[2] != y.shape[1]:
        raise ValueError(f"prediction shape {mc_preds.shape} does not match targets {y.shape}")
    resid = y[:, None, :] - mc_preds
    D = y.shape[1]
    ll = -0.5 * tau * np.sum(resid**2, axis=2)
    if include_constant:
        ll = ll + 0.5 * D * (np.log(tau) - LOG_2PI)
    return ll, resid


def regression_loss(mc_preds, y, alpha: float, tau: float, K: int | None = None,
                    include_likelihood_constant: bool = True) -> float:
    """Summed BB-alpha loss under ``y ~ N(f(x), tau^-1 I)``.

    The constant ``-(D/2) log(tau / 2pi)`` per point is the Gaussian
    normaliser, so with the flag set the loss is a proper negative
    log-likelihood energy.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    ll, _ = _gaussian_ll(mc_preds, y, tau, include_likelihood_constant)
    _check_ll(ll, K)
    return float(alpha_pointwise(ll, alpha).sum())


def regression_loss_grad(mc_preds, y, alpha: float, tau: float) -> np.ndarray:
    """d(summed loss)/d predictions, shape ``(M, K, D)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    ll, resid = _gaussian_ll(mc_preds, y, tau, False)
    g = alpha_pointwise_grad(ll, alpha)
    # d ll / d f = tau * (y - f)
    return g[:, :, None] * tau * resid


def kl_regularizer(params: ParameterSet, layer_reg) -> float:
    """``sum_i c_i ||M_i||_F^2``; biases are point estimates and excluded."""
    if len(layer_reg) != len(params.weights):
        raise ValueError(f"need {len(params.weights)} coefficients, got {len(layer_reg)}")
    return float(sum(c * np.sum(w * w) for c, w in zip(layer_reg, params.weights)))


def kl_regularizer_grad(params: ParameterSet, layer_reg) -> ParameterSet:
    if len(layer_reg) != len(params.weights):
        raise ValueError(f"need {len(params.weights)} coefficients, got {len(layer_reg)}")
    return ParameterSet([2.0 * c * w for c, w in zip(layer_reg, params.weights)],
                        [np.zeros_like(b) for b in params.biases])


def log_probs_true(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    """Log-probability of the labelled class for every (point, sample).

    Returns ``(ll, logp)`` where ``logp`` is the full ``(M, K, C)`` log-softmax.
    """
    logp = log_softmax(logits, axis=-1)
    labels = np.asarray(labels, dtype=np.int64)
    ll = np.take_along_axis(logp, labels[:, None, None], axis=2)[:, :, 0]
    return ll, logp


def _add(a: ParameterSet, b: ParameterSet, scale_a=1.0) -> ParameterSet:
    return ParameterSet([scale_a * x + y for x, y in zip(a.weights, b.weights)],
                        [scale_a * x + y for x, y in zip(a.biases, b.biases)])


def total_objective(params: ParameterSet, arch: MLPArchitecture, batch, config: AlphaObjectiveConfig,
                    rng: RngStream):
    """Mini-batch estimate of the full training energy and its gradient.

    ``batch`` is ``(X, y)``: integer labels for the softmax likelihood, real
    targets for the Gaussian one. Returns ``(value, gradient ParameterSet)``.
    """
    X, y = batch
    X = np.asarray(X, dtype=DTYPE)
    M = X.shape[0]
    if M == 0:
        raise ValueError("empty batch")
    if len(config.layer_reg) != arch.n_layers:
        raise ValueError("layer_reg length must equal the number of weight layers")
    logits, masks, record = forward_stochastic(params, arch, X, config.K, rng)
    scale = config.N / M
    if config.likelihood == "softmax":
        ll, logp = log_probs_true(logits, y)
        data = alpha_pointwise(ll, config.alpha).sum()
        g_ll = alpha_pointwise_grad(ll, config.alpha)
        onehot = np.zeros_like(logp)
        np.put_along_axis(onehot, np.asarray(y, dtype=np.int64)[:, None, None], 1.0, axis=2)
        dlogits = g_ll[:, :, None] * (onehot - np.exp(logp))
    else:
        data = regression_loss(logits, y, config.alpha, config.tau, config.K,
                               config.include_likelihood_constant)
        dlogits = regression_loss_grad(logits, y, config.alpha, config.tau)
    grads = backward_params(params, record, masks, scale * dlogits)
    value = scale * data + kl_regularizer(params, config.layer_reg)
    grads = _add(grads, kl_regularizer_grad(params, config.layer_reg))
    return float(value), grads
