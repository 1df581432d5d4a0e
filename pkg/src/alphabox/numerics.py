"""Stable reductions and seeded sampling shared by every other module.

Tensors are plain ``numpy.ndarray`` objects in float64. Random draws go
through :class:`RngStream`, a thin wrapper over numpy's PCG64 generator
whose draw order is fixed and documented so that experiments replay
bit-exactly for a given seed.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class RngStream:
    """Single-owner deterministic random stream.

    Backed by ``numpy.random.PCG64`` seeded with a 64-bit unsigned integer.
    Every sampling helper in this module consumes exactly ``prod(shape)``
    uniform or normal variates in row-major order, so identical seeds and
    identical call sequences give identical outputs.

    Do not share one stream between threads; use :meth:`spawn` to derive
    independent child streams deterministically.
    """

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._seq = np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def uniform(self, shape) -> np.ndarray:
        return self.generator.random(shape, dtype=DTYPE)

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape, dtype=DTYPE)

    def integers(self, high: int, size=None):
        return self.generator.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def spawn(self, n: int) -> list["RngStream"]:
        """Deterministic child streams (independent of draws made so far)."""
        children = []
        for child_seq in self._seq.spawn(n):
            child = RngStream.__new__(RngStream)
            child.seed = self.seed
            child._seq = child_seq
            child.generator = np.random.Generator(np.random.PCG64(child_seq))
            children.append(child)
        return children


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise ValueError("empty reduction")
    if np.isnan(v).any():
        raise ValueError("non-finite input")
    return v


def log_sum_exp(v, axis=None):
    """log(sum(exp(v))) along ``axis`` via the max-shift trick.

    ``-inf`` entries contribute nothing; an all ``-inf`` slice returns
    ``-inf``. NaN or ``+inf`` entries raise ``ValueError``.
    """
    v = _as_vector(v)
    if np.isposinf(v).any():
        raise ValueError("non-finite input")
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(logits, axis=-1) -> np.ndarray:
    logits = np.asarray(logits, dtype=DTYPE)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite input")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis=-1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def sample_bernoulli_mask(rng: RngStream, p_keep: float, shape) -> np.ndarray:
    """Binary mask with i.i.d. entries equal to 1 with probability ``p_keep``.

    Consumes exactly ``prod(shape)`` uniforms: entry is 1 iff ``u < p_keep``.
    """
    if not 0.0 <= p_keep <= 1.0:
        raise ValueError(f"p_keep must lie in [0, 1], got {p_keep}")
    return (rng.uniform(shape) < p_keep).astype(DTYPE)


def sample_gaussian(rng: RngStream, mean, stddev, shape) -> np.ndarray:
    if stddev < 0:
        raise ValueError(f"stddev must be non-negative, got {stddev}")
    return mean + stddev * rng.normal(shape)
