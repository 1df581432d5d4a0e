import math

import numpy as np
import pytest

from alphabox.harness.gradcheck import finite_difference_grad, relative_error
from alphabox.net import (MaskSet, MLPArchitecture, ParameterSet, backward_params,
                          forward_deterministic, forward_stochastic, forward_with_masks,
                          init_params, input_gradient, sample_masks)
from alphabox.numerics import RngStream


def random_net(seed, widths, acts=None, rates=None):
    rng = RngStream(seed)
    arch = MLPArchitecture(widths, acts, rates)
    p = init_params(arch, rng)
    p = ParameterSet(p.weights, [0.2 * rng.normal(b.shape) for b in p.biases])
    return arch, p, rng


def test_architecture_validation():
    with pytest.raises(ValueError):
        MLPArchitecture([3])
    with pytest.raises(ValueError):
        MLPArchitecture([3, 0, 2])
    with pytest.raises(ValueError):
        MLPArchitecture([3, 2], dropout_rates=[1.0])
    with pytest.raises(ValueError):
        MLPArchitecture([3, 4, 2], activations=["tanh"])


def test_identity_network():
    arch = MLPArchitecture([3, 3])
    params = ParameterSet([np.eye(3)], [np.zeros(3)])
    X = RngStream(0).normal((4, 3))
    logits, _, _ = forward_stochastic(params, arch, X, 5, RngStream(1))
    for k in range(5):
        np.testing.assert_array_equal(logits[:, k, :], X)


def test_all_zero_mask_leaves_bias():
    arch, params, rng = random_net(0, [4, 3], rates=[0.5])
    X = rng.normal((2, 4))
    masks = MaskSet([np.zeros((2, 3, 4))])
    logits, _ = forward_with_masks(params, arch, X, masks, 3)
    np.testing.assert_array_equal(logits, np.broadcast_to(params.biases[0], (2, 3, 3)))


def test_forward_is_deterministic_for_a_seed():
    arch, params, rng = random_net(1, [5, 6, 3], rates=[0.3, 0.5])
    X = rng.normal((4, 5))
    a, ma, _ = forward_stochastic(params, arch, X, 7, RngStream(9))
    b, mb, _ = forward_stochastic(params, arch, X, 7, RngStream(9))
    np.testing.assert_array_equal(a, b)


def test_masks_differ_between_samples_and_points():
    arch = MLPArchitecture([50, 2], dropout_rates=[0.5])
    m = sample_masks(arch, 3, 4, RngStream(0)).masks[0]
    assert m.shape == (3, 4, 50)
    assert not np.array_equal(m[0, 0], m[0, 1])
    assert not np.array_equal(m[0, 0], m[1, 0])


def test_mask_keep_frequency():
    arch = MLPArchitecture([10, 2], dropout_rates=[0.3])
    m = sample_masks(arch, 1000, 10, RngStream(5)).masks[0]
    n = m.size
    assert abs(m.mean() - 0.7) <= 3 * math.sqrt(0.7 * 0.3 / n)


def test_positive_homogeneity_with_zero_bias():
    arch, params, rng = random_net(2, [4, 6, 5, 3], rates=[0.2, 0.4, 0.1])
    params = ParameterSet(params.weights, [np.zeros_like(b) for b in params.biases])
    X = rng.normal((3, 4))
    masks = sample_masks(arch, 3, 4, rng)
    f1, _ = forward_with_masks(params, arch, X, masks, 4)
    # powers of two keep the scaling exact in floating point
    for c in (0.5, 2.0, 8.0):
        fc, _ = forward_with_masks(params, arch, c * X, masks, 4)
        np.testing.assert_array_equal(fc, c * f1)


def test_shape_mismatch_errors():
    arch, params, rng = random_net(3, [4, 3])
    with pytest.raises(ValueError):
        forward_stochastic(params, arch, rng.normal((2, 5)), 2, rng)
    with pytest.raises(ValueError):
        forward_stochastic(params, arch, rng.normal((2, 4)), 0, rng)


def _fd_param_check(seed, widths, acts, rates, M=3, K=4):
    arch, params, rng = random_net(seed, widths, acts, rates)
    X = rng.normal((M, widths[0]))
    masks = sample_masks(arch, M, K, rng)
    upstream = rng.normal((M, K, widths[-1]))
    _, record = forward_with_masks(params, arch, X, masks, K)
    g = backward_params(params, record, masks, upstream).flatten()

    def f(theta):
        out, _ = forward_with_masks(ParameterSet.unflatten(theta, arch), arch, X, masks, K)
        return float(np.sum(out * upstream))

    return relative_error(g, finite_difference_grad(f, params.flatten()))


@pytest.mark.parametrize("seed", range(8))
def test_backward_matches_finite_differences(seed):
    rng = RngStream(100 + seed)
    n_layers = int(rng.integers(3)) + 1
    widths = [int(w) + 1 for w in rng.integers(6, size=n_layers + 1)]
    acts = ["relu" if rng.uniform(()) < 0.6 else "identity" for _ in range(n_layers - 1)]
    rates = [float(r) for r in rng.uniform(n_layers) * 0.5]
    assert _fd_param_check(seed, widths, acts, rates) < 1e-5


def test_backward_random_342():
    assert _fd_param_check(42, [3, 4, 2], ["relu"], [0.0, 0.3]) < 1e-6


def test_backward_linearity():
    arch, params, rng = random_net(4, [3, 4, 2], rates=[0.2, 0.2])
    X = rng.normal((2, 3))
    logits, masks, record = forward_stochastic(params, arch, X, 3, rng)
    zero = backward_params(params, record, masks, np.zeros_like(logits))
    assert all(np.all(w == 0) for w in zero.weights)
    up = rng.normal(logits.shape)
    g1 = backward_params(params, record, masks, up).flatten()
    g2 = backward_params(params, record, masks, 2 * up).flatten()
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-14)


def test_backward_stale_record():
    arch, params, rng = random_net(5, [3, 4, 2])
    logits, masks, record = forward_stochastic(params, arch, rng.normal((2, 3)), 2, rng)
    other = init_params(MLPArchitecture([3, 5, 2]), rng)
    with pytest.raises(ValueError):
        backward_params(other, record, masks, np.zeros_like(logits))
    with pytest.raises(ValueError):
        backward_params(params, record, masks, np.zeros((2, 3, 2)))


def test_input_gradient_linear_layer():
    arch = MLPArchitecture([4, 3])
    W = RngStream(6).normal((4, 3))
    params = ParameterSet([W], [np.zeros(3)])
    dlogits = np.zeros((1, 3))
    dlogits[0, 1] = 1.0
    g = input_gradient(params, arch, np.ones(4), MaskSet([None]), dlogits)
    np.testing.assert_allclose(g, W[:, 1])


def test_input_gradient_finite_differences():
    arch, params, rng = random_net(7, [5, 6, 4, 3], ["relu", "relu"], [0.3, 0.3, 0.3])
    x = rng.normal(5)
    K = 4
    masks = sample_masks(arch, 1, K, rng)
    up = rng.normal((K, 3))
    g = input_gradient(params, arch, x, MaskSet([m[0] for m in masks.masks]), up)

    def f(xx):
        out, _ = forward_with_masks(params, arch, xx[None], masks, K)
        return float(np.sum(out[0] * up))

    assert relative_error(g, finite_difference_grad(f, x)) < 1e-6


def test_input_gradient_blocked_by_zero_mask():
    arch, params, rng = random_net(8, [4, 5, 2], rates=[0.5, 0.0])
    masks = MaskSet([np.zeros((1, 3, 4)), None])
    g = input_gradient(params, arch, rng.normal((1, 4)), masks, rng.normal((1, 3, 2)))
    np.testing.assert_array_equal(g, 0.0)


def test_deterministic_forward_matches_no_dropout():
    arch, params, rng = random_net(9, [3, 4, 2])
    X = rng.normal((5, 3))
    logits, _, _ = forward_stochastic(params, arch, X, 3, rng)
    det = forward_deterministic(params, arch, X)
    for k in range(3):
        np.testing.assert_allclose(logits[:, k], det)


def test_flatten_roundtrip():
    arch, params, _ = random_net(10, [3, 4, 2])
    back = ParameterSet.unflatten(params.flatten(), arch)
    for a, b in zip(params.weights + params.biases, back.weights + back.biases):
        np.testing.assert_array_equal(a, b)
