"""Kernel checks against plain numpy oracles plus the MAC accounting contract."""

import math

import numpy as np
import pytest

from stvit.errors import ConfigError, NumericError, ShapeError
from stvit.ops import (
    LinearWeights,
    adaptive_avg_pool,
    count_macs,
    depthwise_conv2d,
    gelu,
    layer_norm,
    linear,
    mac_scope,
    matmul,
    softmax_rows,
)


def test_matmul_matches_numpy():
    rng = np.random.default_rng(11)
    for _ in range(25):
        m, k, n = rng.integers(1, 13, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        np.testing.assert_allclose(matmul(a, b), a @ b, rtol=0, atol=0)


def test_matmul_stacked_matches_numpy():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((5, 7, 3))
    b = rng.standard_normal((5, 3, 4))
    np.testing.assert_allclose(matmul(a, b), a @ b, rtol=0, atol=0)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3, 4)), np.zeros((3, 4, 2)))
    with pytest.raises(ShapeError):
        matmul(np.zeros(3), np.zeros(3))


def test_matmul_narrows_only_for_float32_inputs():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((4, 5)).astype(np.float32)
    b = rng.standard_normal((5, 2)).astype(np.float32)
    out = matmul(a, b)
    assert out.dtype == np.float32
    wide = a.astype(np.float64) @ b.astype(np.float64)
    np.testing.assert_allclose(out, wide.astype(np.float32), rtol=0, atol=0)
    assert matmul(a.astype(np.float64), b).dtype == np.float64


def test_mac_counting_totals_and_scopes():
    a = np.ones((3, 4))
    b = np.ones((4, 5))
    with count_macs() as counter:
        matmul(a, b)
        with mac_scope("outer"):
            matmul(a, b)
            with mac_scope("inner"):
                matmul(np.ones((2, 6, 7)), np.ones((2, 7, 3)))
    assert counter.total == 60 + 60 + 2 * 6 * 7 * 3
    assert counter.by_scope["outer"] == 60 + 2 * 6 * 7 * 3
    assert counter.by_scope["inner"] == 2 * 6 * 7 * 3


def test_mac_scope_is_noop_without_counter():
    with mac_scope("ignored"):
        out = matmul(np.ones((2, 2)), np.ones((2, 2)))
    np.testing.assert_allclose(out, 2 * np.ones((2, 2)))


def test_counters_do_not_leak_between_contexts():
    with count_macs() as first:
        matmul(np.ones((2, 2)), np.ones((2, 2)))
    with count_macs() as second:
        pass
    assert first.total == 8
    assert second.total == 0


def test_linear_matches_affine_oracle():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((6, 4))
    w = LinearWeights(rng.standard_normal((4, 3)), rng.standard_normal(3))
    np.testing.assert_allclose(linear(x, w), x @ w.weight + w.bias, rtol=0, atol=1e-15)
    w_nobias = LinearWeights(w.weight, None)
    np.testing.assert_allclose(linear(x, w_nobias), x @ w.weight, rtol=0, atol=0)


def test_linear_weights_validate_shapes():
    with pytest.raises(ShapeError):
        LinearWeights(np.zeros(4))
    with pytest.raises(ShapeError):
        LinearWeights(np.zeros((4, 3)), np.zeros(4))


def test_softmax_rows_matches_oracle_and_sums_to_one():
    rng = np.random.default_rng(15)
    for _ in range(10):
        x = rng.standard_normal((5, 9)) * rng.uniform(0.1, 50)
        out = softmax_rows(x)
        exps = np.exp(x - x.max(axis=-1, keepdims=True))
        np.testing.assert_allclose(out, exps / exps.sum(axis=-1, keepdims=True), atol=1e-15)
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(5), atol=1e-12)


def test_softmax_rows_is_shift_invariant_and_overflow_safe():
    x = np.array([[1e4, 1e4 + 2.0, 1e4 - 3.0]])
    out = softmax_rows(x)
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, softmax_rows(x - 1e4), atol=1e-15)


def test_softmax_rows_rejects_nan_and_empty_rows():
    with pytest.raises(NumericError):
        softmax_rows(np.array([[0.0, np.nan]]))
    with pytest.raises(NumericError):
        softmax_rows(np.array([[-np.inf, -np.inf]]))


def test_layer_norm_matches_manual_population_stats():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((7, 5))
    gamma = rng.standard_normal(5)
    beta = rng.standard_normal(5)
    eps = 1e-5
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    want = (x - mean) / np.sqrt(var + eps) * gamma + beta
    np.testing.assert_allclose(layer_norm(x, gamma, beta, eps), want, atol=1e-14)


def test_layer_norm_rejects_mismatched_affine():
    with pytest.raises(ShapeError):
        layer_norm(np.zeros((2, 4)), np.ones(3), np.zeros(4))


def test_gelu_matches_tanh_formula():
    x = np.linspace(-4, 4, 33)
    inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)
    want = 0.5 * x * (1.0 + np.tanh(inner))
    np.testing.assert_allclose(gelu(x), want, atol=1e-15)
    assert gelu(np.zeros(3)).sum() == 0.0


def test_depthwise_conv2d_matches_naive_loops():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((6, 5, 3))
    kernel = rng.standard_normal((3, 3, 3))
    h, w, c = x.shape
    k = kernel.shape[0]
    pad = k // 2
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c))
    padded[pad:pad + h, pad:pad + w] = x
    want = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                want[i, j, ch] = np.sum(padded[i:i + k, j:j + k, ch] * kernel[:, :, ch])
    np.testing.assert_allclose(depthwise_conv2d(x, kernel), want, atol=1e-12)


def test_depthwise_conv2d_counts_macs_and_validates():
    x = np.ones((4, 5, 2))
    kernel = np.ones((3, 3, 2))
    with count_macs() as counter:
        depthwise_conv2d(x, kernel)
    assert counter.total == 9 * 4 * 5 * 2
    with pytest.raises(ConfigError):
        depthwise_conv2d(x, np.ones((2, 2, 2)))
    with pytest.raises(ShapeError):
        depthwise_conv2d(x, np.ones((3, 3, 5)))


def test_adaptive_avg_pool_divisible_equals_block_means():
    rng = np.random.default_rng(18)
    x = rng.standard_normal((8, 6, 2))
    out = adaptive_avg_pool(x, 4, 3)
    want = x.reshape(4, 2, 3, 2, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(out, want, atol=1e-14)


def test_adaptive_avg_pool_nondivisible_matches_window_rule():
    rng = np.random.default_rng(19)
    x = rng.standard_normal((7, 5, 1))
    out = adaptive_avg_pool(x, 3, 2)
    for i in range(3):
        r0, r1 = (i * 7) // 3, -(-((i + 1) * 7) // 3)
        for j in range(2):
            c0, c1 = (j * 5) // 2, -(-((j + 1) * 5) // 2)
            np.testing.assert_allclose(out[i, j], x[r0:r1, c0:c1].mean(axis=(0, 1)), atol=1e-14)


def test_adaptive_avg_pool_identity_and_errors():
    rng = np.random.default_rng(20)
    x = rng.standard_normal((3, 4, 2))
    np.testing.assert_allclose(adaptive_avg_pool(x, 3, 4), x, rtol=0, atol=0)
    with pytest.raises(ConfigError):
        adaptive_avg_pool(x, 4, 4)
    with pytest.raises(ConfigError):
        adaptive_avg_pool(x, 0, 1)
    with pytest.raises(ShapeError):
        adaptive_avg_pool(np.zeros((3, 4)), 1, 1)
