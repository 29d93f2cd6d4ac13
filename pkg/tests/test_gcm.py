import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osad.errors import InvalidArgumentError
from osad.gcm import GcmParams, attention_weights, context_delta, gcm_forward, global_context


def loop_oracle(x, p):
    """Position-by-position reference written with plain Python loops."""
    c, n = x.shape
    logits = [sum(p.theta_k[k] * x[k, j] for k in range(c)) for j in range(n)]
    mx = max(logits)
    e = [math.exp(v - mx) for v in logits]
    alpha = [v / sum(e) for v in e]
    ctx = [sum(alpha[j] * x[k, j] for j in range(n)) for k in range(c)]
    h = [sum(p.theta_1[i, k] * ctx[k] for k in range(c)) for i in range(len(p.ln_gain))]
    mu = sum(h) / len(h)
    var = sum((v - mu) ** 2 for v in h) / len(h)
    h = [p.ln_gain[i] * (v - mu) / math.sqrt(var + p.eps) + p.ln_bias[i] for i, v in enumerate(h)]
    h = [max(v, 0.0) for v in h]
    delta = [sum(p.theta_2[k, i] * h[i] for i in range(len(h))) for k in range(c)]
    return np.array([[x[k, j] + delta[k] for j in range(n)] for k in range(c)])


def test_matches_loop_oracle(rng):
    p = GcmParams.random(8, r=4, seed=3, scale=0.5)
    x = rng.normal(size=(8, 3, 5))
    out = gcm_forward(x, p)
    assert out.shape == x.shape
    np.testing.assert_allclose(out.reshape(8, -1), loop_oracle(x.reshape(8, -1), p), atol=1e-12)


def test_zero_theta2_is_identity(rng):
    p = GcmParams.random(8, seed=1)
    p = GcmParams(p.theta_k, p.theta_1, np.zeros_like(p.theta_2), p.ln_gain, p.ln_bias)
    x = rng.normal(size=(8, 6))
    np.testing.assert_array_equal(gcm_forward(x, p), x)


def test_zero_theta_k_gives_mean_pooling(rng):
    p = GcmParams.random(4, seed=2)
    p = GcmParams(np.zeros(4), p.theta_1, p.theta_2, p.ln_gain, p.ln_bias)
    x = rng.normal(size=(4, 7))
    np.testing.assert_allclose(attention_weights(x, p.theta_k), np.full(7, 1 / 7), atol=1e-15)
    np.testing.assert_allclose(global_context(x, p.theta_k), x.mean(axis=1), atol=1e-14)


def test_single_position():
    p = GcmParams.random(4, seed=0)
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    np.testing.assert_allclose(global_context(x, p.theta_k), x[:, 0], atol=1e-15)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_permutation_equivariant_and_shared_delta(seed, n):
    rng = np.random.default_rng(seed)
    p = GcmParams.random(8, seed=seed, scale=0.3)
    x = rng.normal(size=(8, n)) * 3
    perm = rng.permutation(n)
    out = gcm_forward(x, p)
    np.testing.assert_array_equal(gcm_forward(x[:, perm], p), out[:, perm])
    diff = out - x
    np.testing.assert_allclose(diff, np.repeat(context_delta(x, p)[:, None], n, axis=1), atol=1e-12)
    alpha = attention_weights(x, p.theta_k)
    assert alpha.sum() == pytest.approx(1.0, abs=1e-12) and np.all(alpha >= 0)


def test_shape_errors(rng):
    with pytest.raises(InvalidArgumentError):
        GcmParams.random(6, r=4)
    p = GcmParams.random(8)
    with pytest.raises(InvalidArgumentError):
        gcm_forward(rng.normal(size=(4, 5)), p)
    with pytest.raises(InvalidArgumentError):
        gcm_forward(np.zeros((8, 0)), p)
    with pytest.raises(InvalidArgumentError):
        gcm_forward(np.full((8, 2), np.nan), p)
    with pytest.raises(InvalidArgumentError):
        GcmParams(np.zeros(8), np.zeros((3, 8)), np.zeros((8, 2)), np.ones(2), np.zeros(2))


def test_deterministic_init():
    a, b = GcmParams.random(16, seed=5), GcmParams.random(16, seed=5)
    np.testing.assert_array_equal(a.theta_1, b.theta_1)
    assert a.theta_1.shape == (4, 16) and a.theta_2.shape == (16, 4)


def test_numerical_jacobian_agrees_with_directional_derivative(rng):
    p = GcmParams.random(8, seed=11, scale=0.5)
    x = rng.normal(size=(8, 4))
    g = lambda v: float(gcm_forward(v.reshape(8, 4), p).sum())  # noqa: E731
    from osad.numerics import finite_diff_grad

    grad = finite_diff_grad(g, x.ravel(), 1e-6)
    for _ in range(5):
        v = rng.normal(size=32)
        v /= np.linalg.norm(v)
        eps = 1e-5
        directional = (g(x.ravel() + eps * v) - g(x.ravel() - eps * v)) / (2 * eps)
        assert abs(grad @ v - directional) <= 1e-4 * max(1.0, abs(directional))
