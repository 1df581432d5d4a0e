"""Fully-connected dropout networks with hand-written backprop.

Dropout multiplies each weight layer's *input* units by a Bernoulli mask,
which is the same as zeroing rows of the weight matrix. The masked weights
are the posterior sample, so no ``1/p`` rescaling happens anywhere.

Batched tensors use the layout ``(M, K, width)``: batch row, MC sample,
unit. Every ``(n, k)`` pair gets its own mask collection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DTYPE, RngStream, sample_bernoulli_mask, sample_gaussian

ACTIVATIONS = ("relu", "identity")


@dataclass
class MLPArchitecture:
    """Layer widths ``[d_in, h_1, ..., h_L, d_out]`` plus per-layer settings.

    ``activations`` has one entry per hidden layer, ``dropout_rates`` one
    entry per weight layer (the rate applied to that layer's inputs).
    """

    layer_widths: list[int]
    activations: list[str] | None = None
    dropout_rates: list[float] | None = None

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        if len(self.layer_widths) < 2:
            raise ValueError("need at least one weight layer")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be >= 1")
        n_hidden = len(self.layer_widths) - 2
        if self.activations is None:
            self.activations = ["relu"] * n_hidden
        self.activations = list(self.activations)
        if len(self.activations) != n_hidden:
            raise ValueError("one activation per hidden layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.dropout_rates is None:
            self.dropout_rates = [0.0] * self.n_layers
        self.dropout_rates = [float(r) for r in self.dropout_rates]
        if len(self.dropout_rates) != self.n_layers:
            raise ValueError("one dropout rate per weight layer")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def keep_probs(self) -> list[float]:
        return [1.0 - r for r in self.dropout_rates]

    @property
    def d_in(self) -> int:
        return self.layer_widths[0]

    @property
    def d_out(self) -> int:
        return self.layer_widths[-1]

    def deterministic(self) -> "MLPArchitecture":
        """Same network with dropout switched off (maximum-likelihood baseline)."""
        return MLPArchitecture(list(self.layer_widths), list(self.activations),
                               [0.0] * self.n_layers)

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths),
                "activations": list(self.activations),
                "dropout_rates": list(self.dropout_rates)}

    @classmethod
    def from_dict(cls, d: dict) -> "MLPArchitecture":
        return cls(d["layer_widths"], d.get("activations"), d.get("dropout_rates"))


@dataclass
class ParameterSet:
    """Weight matrices ``M_i`` (shape ``in x out``) and bias vectors ``b_i``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts).astype(DTYPE, copy=False)

    @classmethod
    def unflatten(cls, flat: np.ndarray, arch: MLPArchitecture) -> "ParameterSet":
        flat = np.asarray(flat, dtype=DTYPE)
        if flat.size != n_params(arch):
            raise ValueError(f"expected {n_params(arch)} parameters, got {flat.size}")
        weights, biases, pos = [], [], 0
        for d_i, d_o in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
            weights.append(flat[pos:pos + d_i * d_o].reshape(d_i, d_o).copy())
            pos += d_i * d_o
            biases.append(flat[pos:pos + d_o].copy())
            pos += d_o
        return cls(weights, biases)

    def scaled(self, s: float) -> "ParameterSet":
        return ParameterSet([s * w for w in self.weights], [s * b for b in self.biases])


def n_params(arch: MLPArchitecture) -> int:
    w = arch.layer_widths
    return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


def init_params(arch: MLPArchitecture, rng: RngStream) -> ParameterSet:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    weights, biases = [], []
    for d_i, d_o in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
        weights.append(sample_gaussian(rng, 0.0, 1.0 / np.sqrt(d_i), (d_i, d_o)))
        biases.append(np.zeros(d_o, dtype=DTYPE))
    return ParameterSet(weights, biases)


def check_params(params: ParameterSet, arch: MLPArchitecture) -> None:
    if len(params.weights) != arch.n_layers or len(params.biases) != arch.n_layers:
        raise ValueError("parameter set does not match architecture depth")
    for i, (d_i, d_o) in enumerate(zip(arch.layer_widths[:-1], arch.layer_widths[1:])):
        if params.weights[i].shape != (d_i, d_o) or params.biases[i].shape != (d_o,):
            raise ValueError(f"layer {i}: parameter shape mismatch")


@dataclass
class MaskSet:
    """Per-layer masks of shape ``(M, K, in_width)``; ``None`` means keep all."""

    masks: list[np.ndarray | None]

    @property
    def n_samples(self) -> int:
        for m in self.masks:
            if m is not None:
                return m.shape[1]
        return 0

    def select(self, rows) -> "MaskSet":
        return MaskSet([None if m is None else m[rows] for m in self.masks])


@dataclass
class ForwardRecord:
    """Masked layer inputs and pre-activations kept for backprop."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    activations: list[str] = field(default_factory=list)
    shapes: list[tuple[int, int]] = field(default_factory=list)


def sample_masks(arch: MLPArchitecture, M: int, K: int, rng: RngStream) -> MaskSet:
    """Draw one mask collection per ``(n, k)`` pair.

    Draw order is (sample k, layer i, row-major ``(n, unit)``). Layers with
    dropout rate 0 consume no draws.
    """
    per_layer = [np.empty((M, K, w)) if r > 0 else None
                 for w, r in zip(arch.layer_widths[:-1], arch.dropout_rates)]
    for k in range(K):
        for i, (w, p) in enumerate(zip(arch.layer_widths[:-1], arch.keep_probs)):
            if per_layer[i] is not None:
                per_layer[i][:, k, :] = sample_bernoulli_mask(rng, p, (M, w))
    return MaskSet(per_layer)


def _activate(a, kind):
    return np.maximum(a, 0.0) if kind == "relu" else a


def forward_with_masks(params: ParameterSet, arch: MLPArchitecture, X, masks: MaskSet,
                       K: int | None = None):
    """Apply the network to every ``(n, k)`` pair under fixed masks.

    Returns ``(logits, record)`` with logits of shape ``(M, K, d_out)``.
    """
    check_params(params, arch)
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != arch.d_in:
        raise ValueError(f"expected inputs of shape (M, {arch.d_in}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    if len(masks.masks) != arch.n_layers:
        raise ValueError("mask set does not match architecture depth")
    if K is None:
        K = max(masks.n_samples, 1)
    M = X.shape[0]
    h = X[:, None, :]
    record = ForwardRecord()
    for i in range(arch.n_layers):
        m = masks.masks[i]
        if m is not None:
            if m.shape != (M, K, arch.layer_widths[i]):
                raise ValueError(f"layer {i}: mask shape {m.shape} does not match")
            h = h * m
        a = h @ params.weights[i] + params.biases[i]
        if a.shape[1] != K:
            # unmasked input layer: one product shared by all K samples
            a = np.broadcast_to(a, (M, K, a.shape[-1]))
        record.inputs.append(h)
        record.preacts.append(a)
        record.shapes.append(params.weights[i].shape)
        if i < arch.n_layers - 1:
            kind = arch.activations[i]
            record.activations.append(kind)
            h = _activate(a, kind)
    return a, record


def forward_stochastic(params: ParameterSet, arch: MLPArchitecture, X, K: int,
                       rng: RngStream):
    """K stochastic forward passes per input with fresh masks.

    Returns ``(logits, masks, record)``; logits have shape ``(M, K, d_out)``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != arch.d_in:
        raise ValueError(f"expected inputs of shape (M, {arch.d_in}), got {X.shape}")
    masks = sample_masks(arch, X.shape[0], K, rng)
    logits, record = forward_with_masks(params, arch, X, masks, K)
    return logits, masks, record


def _backprop(params: ParameterSet, record: ForwardRecord, masks: MaskSet, dlogits,
              want_params=True, want_input=False):
    n_layers = len(record.preacts)
    if len(params.weights) != n_layers:
        raise ValueError("stale forward record: depth mismatch")
    g = np.asarray(dlogits, dtype=DTYPE)
    if g.shape != record.preacts[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match logits "
                         f"{record.preacts[-1].shape}")
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in reversed(range(n_layers)):
        W = params.weights[i]
        if W.shape != record.shapes[i]:
            raise ValueError(f"stale forward record: layer {i} shape drift")
        if want_params:
            h = record.inputs[i]
            if h.shape[1] != g.shape[1]:
                gw[i] = h[:, 0, :].T @ g.sum(axis=1)
            else:
                gw[i] = h.reshape(-1, h.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            gb[i] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        if i == 0 and not want_input:
            break
        gh = g @ W.T
        if masks.masks[i] is not None:
            gh = gh * masks.masks[i]
        if i == 0:
            # sum over MC samples: every sample sees the same input row
            return (ParameterSet(gw, gb) if want_params else None), gh.sum(axis=1)
        if record.activations[i - 1] == "relu":
            gh = gh * (record.preacts[i - 1] > 0)
        g = gh
    return ParameterSet(gw, gb), None


def backward_params(params: ParameterSet, record: ForwardRecord, masks: MaskSet,
                    dlogits) -> ParameterSet:
    """Gradient of the loss w.r.t. all weights and biases.

    ``dlogits`` is ``dLoss/dLogits`` with shape ``(M, K, d_out)``; the result
    is summed over batch rows and MC samples.
    """
    grads, _ = _backprop(params, record, masks, dlogits, want_params=True)
    return grads


def input_gradient(params: ParameterSet, arch: MLPArchitecture, X, masks: MaskSet,
                   dlogits) -> np.ndarray:
    """Exact gradient of a scalar objective w.r.t. the inputs under fixed masks.

    ``X`` may be a single input vector or a batch ``(M, d_in)``; ``dlogits``
    has shape ``(M, K, d_out)`` (or ``(K, d_out)`` for a single input).
    """
    X = np.asarray(X, dtype=DTYPE)
    single = X.ndim == 1
    if single:
        X = X[None, :]
        dlogits = np.asarray(dlogits)[None]
        masks = MaskSet([None if m is None else (m if m.ndim == 3 else m[None])
                         for m in masks.masks])
    K = np.asarray(dlogits).shape[1]
    _, record = forward_with_masks(params, arch, X, masks, K)
    _, gx = _backprop(params, record, masks, dlogits, want_params=False, want_input=True)
    return gx[0] if single else gx


def forward_deterministic(params: ParameterSet, arch: MLPArchitecture, X) -> np.ndarray:
    """Plain network output with no masks, shape ``(M, d_out)``."""
    logits, _ = forward_with_masks(params, arch, X, MaskSet([None] * arch.n_layers), 1)
    return logits[:, 0, :]


@dataclass
class Model:
    """A trained network: parameters plus the architecture they belong to.

    Dropout models predict by MC dropout; a model whose dropout rates are all
    zero is the deterministic baseline.
    """

    params: ParameterSet
    arch: MLPArchitecture

    @property
    def is_deterministic(self) -> bool:
        return all(r == 0 for r in self.arch.dropout_rates)
