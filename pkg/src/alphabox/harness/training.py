"""Mini-batch optimisation of the BB-alpha energy, evaluation and checkpoints."""
from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..net import MLPArchitecture, Model, ParameterSet, init_params
from ..numerics import DTYPE, RngStream
from ..objective import AlphaObjectiveConfig, total_objective
from ..uncertainty import mc_predict
from .config import ArchitectureConfig, ObjectiveConfig, OptimiserConfig

CHECKPOINT_MAGIC = b"ABOX"
CHECKPOINT_VERSION = 1


class DivergedError(RuntimeError):
    """Training produced a non-finite loss; ``checkpoint`` holds the last finite state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGDMomentum:
    def __init__(self, lr=1e-3, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity = None

    def step(self, theta, grad):
        if self.velocity is None:
            self.velocity = np.zeros_like(theta)
        self.velocity = self.momentum * self.velocity - self.lr * grad
        return theta + self.velocity


def make_optimiser(cfg: OptimiserConfig, n_train: int):
    if cfg.kind == "adam":
        return Adam(cfg.learning_rate)
    if cfg.kind == "sgd_momentum":
        # gradients are of the summed energy; dividing the step by N keeps the
        # learning rate on the familiar per-point scale
        return SGDMomentum(cfg.learning_rate / n_train, cfg.momentum)
    raise ValueError(f"unknown optimiser {cfg.kind!r}")


def build_architecture(d_in: int, d_out: int, cfg: ArchitectureConfig) -> MLPArchitecture:
    widths = [d_in] + [int(h) for h in cfg.hidden_widths] + [d_out]
    n_layers = len(widths) - 1
    rates = [cfg.dropout_rate] * n_layers
    if not cfg.input_dropout:
        rates[0] = 0.0
    return MLPArchitecture(widths, [cfg.activation] * (n_layers - 1), rates)


def objective_config(arch: MLPArchitecture, cfg: ObjectiveConfig, N: int, task: str,
                     tau: float | None = None) -> AlphaObjectiveConfig:
    return AlphaObjectiveConfig(
        alpha=cfg.alpha, K=cfg.K, tau=cfg.tau if tau is None else tau, N=N,
        layer_reg=[p * cfg.weight_decay for p in arch.keep_probs],
        include_likelihood_constant=cfg.include_likelihood_constant,
        likelihood="softmax" if task == "classification" else "gaussian")


@dataclass
class Checkpoint:
    arch: MLPArchitecture
    params: ParameterSet
    metadata: dict = field(default_factory=dict)

    @property
    def model(self) -> Model:
        return Model(self.params, self.arch)

    def to_bytes(self) -> bytes:
        """``ABOX`` + version byte + uint32 header length + JSON header + float64 LE block."""
        header = json.dumps({"architecture": self.arch.to_dict(), "metadata": self.metadata},
                            sort_keys=True).encode("utf-8")
        flat = self.params.flatten().astype("<f8")
        return (CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION]) + struct.pack("<I", len(header))
                + header + flat.tobytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        if blob[4] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob[4]}")
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + hlen].decode("utf-8"))
        arch = MLPArchitecture.from_dict(header["architecture"])
        flat = np.frombuffer(blob[9 + hlen:], dtype="<f8").astype(DTYPE)
        return cls(arch, ParameterSet.unflatten(flat, arch), header.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def evaluate(model: Model, X, y, K_test: int, task: str, rng: RngStream, tau: float = 1.0,
             y_std: float = 1.0) -> dict:
    """Test metrics under MC dropout.

    Regression: ``test_nll`` is the negative log of the MC-averaged Gaussian
    predictive density in original target units (``X``/``y`` are given in
    standardised units and ``y_std`` undoes the scaling), plus ``test_rmse``.
    Classification: accuracy of the argmax of the mean probabilities, mean
    NLL and mean predictive entropy.
    """
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != model.arch.d_in:
        raise ValueError(f"dimension mismatch: model expects {model.arch.d_in} inputs, got {X.shape}")
    summ = mc_predict(model.params, model.arch, X, K_test, rng, y=y, task=task, tau=tau)
    if task == "classification":
        return {"test_nll": float(-summ.loglik.mean()),
                "test_accuracy": float(np.mean(np.argmax(summ.mean_probs, axis=1) == np.asarray(y))),
                "mean_entropy": float(summ.entropy.mean())}
    y = np.asarray(y, dtype=DTYPE).reshape(summ.mean_probs.shape)
    rmse = float(np.sqrt(np.mean((summ.mean_probs - y) ** 2))) * y_std
    return {"test_nll": float(-(summ.loglik - np.log(y_std)).mean()), "test_rmse": rmse}


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    wall_seconds: list = field(default_factory=list)


def fit(arch: MLPArchitecture, X, y, obj: AlphaObjectiveConfig, opt: OptimiserConfig, seed: int,
        eval_fn=None, params: ParameterSet | None = None):
    """Optimise the BB-alpha energy on ``(X, y)``.

    ``eval_fn(model, epoch)`` may return a dict of extra metrics logged each
    epoch. Returns ``(params, TrainLog)``; with zero epochs the initial
    parameters come back unchanged.
    """
    X = np.asarray(X, dtype=DTYPE)
    N = X.shape[0]
    init_rng, order_rng, mask_rng = RngStream(seed).spawn(3)
    if params is None:
        params = init_params(arch, init_rng)
    theta = params.flatten()
    optimiser = make_optimiser(opt, N)
    log = TrainLog()
    bs = min(opt.batch_size, N)
    for epoch in range(1, opt.epochs + 1):
        t0 = time.perf_counter()
        perm = order_rng.permutation(N)
        total = 0.0
        for start in range(0, N, bs):
            idx = perm[start:start + bs]
            current = ParameterSet.unflatten(theta, arch)
            try:
                value, grads = total_objective(current, arch, (X[idx], y[idx]), obj, mask_rng)
                g = grads.flatten()
                ok = np.isfinite(value) and np.all(np.isfinite(g))
            except ValueError as e:
                # overflowing activations surface as non-finite logits
                if "non-finite" not in str(e):
                    raise
                ok = False
            if not ok:
                ckpt = Checkpoint(arch, current, {"epoch": epoch - 1, "seed": seed})
                raise DivergedError(f"diverged at epoch {epoch}", ckpt)
            total += value * len(idx) / N
            theta = optimiser.step(theta, g)
            if not np.all(np.isfinite(theta)):
                ckpt = Checkpoint(arch, current, {"epoch": epoch - 1, "seed": seed})
                raise DivergedError(f"diverged at epoch {epoch}: non-finite parameters", ckpt)
        seconds = time.perf_counter() - t0
        row = {"epoch": epoch, "train_loss": total / N}
        if eval_fn is not None:
            row.update(eval_fn(Model(ParameterSet.unflatten(theta, arch), arch), epoch))
        log.rows.append(row)
        log.wall_seconds.append(seconds)
    return ParameterSet.unflatten(theta, arch), log
