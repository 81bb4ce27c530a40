"""Attention blocks against naive per-head loop oracles."""

import math

import numpy as np
import pytest

from stvit.attention import (
    AttentionWeights,
    cross_attention_layer,
    init_transformer_layer,
    merge_heads,
    multi_head_attention,
    split_heads,
    transformer_layer,
)
from stvit.errors import ConfigError, ShapeError
from stvit.ops import LinearWeights


def naive_softmax(x):
    exps = np.exp(x - x.max(axis=-1, keepdims=True))
    return exps / exps.sum(axis=-1, keepdims=True)


def naive_layer_norm(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def naive_attention(queries, keys, values, w, heads):
    """Per-head loop over explicit column slices; the reference for every block."""
    q = queries @ w.query.weight + w.query.bias
    k = keys @ w.key.weight + w.key.bias
    v = values @ w.value.weight + w.value.bias
    dim = q.shape[1] // heads
    pieces = []
    for h in range(heads):
        qh = q[:, h * dim:(h + 1) * dim]
        kh = k[:, h * dim:(h + 1) * dim]
        vh = v[:, h * dim:(h + 1) * dim]
        attn = naive_softmax(qh @ kh.T / math.sqrt(dim))
        pieces.append(attn @ vh)
    context = np.concatenate(pieces, axis=1)
    return context @ w.out.weight + w.out.bias


def naive_transformer_layer(x, w):
    normed = naive_layer_norm(x, w.attn_norm.gamma, w.attn_norm.beta, w.norm_eps)
    x = x + naive_attention(normed, normed, normed, w.attn, w.heads)
    normed = naive_layer_norm(x, w.ffn_norm.gamma, w.ffn_norm.beta, w.norm_eps)
    hidden = normed @ w.ffn.expand.weight + w.ffn.expand.bias
    inner = math.sqrt(2.0 / math.pi) * (hidden + 0.044715 * hidden**3)
    hidden = 0.5 * hidden * (1.0 + np.tanh(inner))
    return x + hidden @ w.ffn.project.weight + w.ffn.project.bias


def test_split_merge_heads_round_trip():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((6, 12))
    np.testing.assert_array_equal(merge_heads(split_heads(x, 4)), x)
    assert split_heads(x, 3).shape == (3, 6, 4)
    with pytest.raises(ConfigError):
        split_heads(x, 5)


def test_multi_head_attention_matches_per_head_loop():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        heads = int(rng.integers(1, 5))
        dim = heads * int(rng.integers(2, 7))
        nq = int(rng.integers(1, 9))
        nk = int(rng.integers(1, 9))
        w = init_transformer_layer(rng, dim, heads).attn
        queries = rng.standard_normal((nq, dim))
        keys = rng.standard_normal((nk, dim))
        out = multi_head_attention(queries, keys, keys, w, heads)
        want = naive_attention(queries, keys, keys, w, heads)
        np.testing.assert_allclose(out, want, atol=1e-12)


def test_attention_weights_shape_and_normalization():
    rng = np.random.default_rng(23)
    w = init_transformer_layer(rng, 8, 2).attn
    queries = rng.standard_normal((5, 8))
    keys = rng.standard_normal((7, 8))
    out, attn = multi_head_attention(queries, keys, keys, w, 2, return_attention=True)
    assert out.shape == (5, 8)
    assert attn.shape == (2, 5, 7)
    np.testing.assert_allclose(attn.sum(axis=-1), np.ones((2, 5)), atol=1e-12)
    assert (attn >= 0).all()


def test_attention_rejects_mismatched_keys_values():
    rng = np.random.default_rng(24)
    w = init_transformer_layer(rng, 8, 2).attn
    with pytest.raises(ShapeError):
        multi_head_attention(np.zeros((2, 8)), np.zeros((3, 8)), np.zeros((4, 8)), w, 2)


def test_transformer_layer_matches_naive_block():
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        heads = int(rng.integers(1, 4))
        dim = heads * int(rng.integers(2, 6))
        w = init_transformer_layer(rng, dim, heads)
        x = rng.standard_normal((int(rng.integers(2, 10)), dim))
        np.testing.assert_allclose(transformer_layer(x, w), naive_transformer_layer(x, w),
                                   atol=1e-12)


def test_cross_attention_layer_uses_raw_keys():
    rng = np.random.default_rng(25)
    w = init_transformer_layer(rng, 8, 2)
    queries = rng.standard_normal((3, 8))
    keys = rng.standard_normal((6, 8))
    normed = naive_layer_norm(queries, w.attn_norm.gamma, w.attn_norm.beta, w.norm_eps)
    attended = naive_attention(normed, keys, keys, w.attn, w.heads)
    x = queries + attended
    normed = naive_layer_norm(x, w.ffn_norm.gamma, w.ffn_norm.beta, w.norm_eps)
    hidden = normed @ w.ffn.expand.weight + w.ffn.expand.bias
    inner = math.sqrt(2.0 / math.pi) * (hidden + 0.044715 * hidden**3)
    hidden = 0.5 * hidden * (1.0 + np.tanh(inner))
    want = x + hidden @ w.ffn.project.weight + w.ffn.project.bias
    np.testing.assert_allclose(cross_attention_layer(queries, keys, w), want, atol=1e-12)


def test_query_offset_shifts_logits_linearly():
    rng = np.random.default_rng(26)
    w = init_transformer_layer(rng, 8, 2)
    queries = rng.standard_normal((4, 8))
    keys = rng.standard_normal((5, 8))
    offset = rng.standard_normal((4, 8))
    _, fused = cross_attention_layer(queries, keys, w, query_offset=offset,
                                     return_attention=True)
    normed = naive_layer_norm(queries, w.attn_norm.gamma, w.attn_norm.beta, w.norm_eps)
    q = (normed + offset) @ w.attn.query.weight + w.attn.query.bias
    k = keys @ w.attn.key.weight + w.attn.key.bias
    dim = 4
    want = []
    for h in range(2):
        logits = q[:, h * dim:(h + 1) * dim] @ k[:, h * dim:(h + 1) * dim].T / math.sqrt(dim)
        want.append(naive_softmax(logits))
    np.testing.assert_allclose(fused, np.stack(want), atol=1e-12)
    with pytest.raises(ShapeError):
        cross_attention_layer(queries, keys, w, query_offset=rng.standard_normal((3, 8)))


def test_init_transformer_layer_shapes():
    rng = np.random.default_rng(27)
    w = init_transformer_layer(rng, 12, 3, ffn_ratio=2)
    assert w.attn.query.weight.shape == (12, 12)
    assert w.ffn.expand.weight.shape == (12, 24)
    assert w.ffn.project.weight.shape == (24, 12)
    assert w.heads == 3
    with pytest.raises(ConfigError):
        init_transformer_layer(rng, 10, 3)


def test_identity_value_path_recovers_convex_mixture():
    rng = np.random.default_rng(28)
    dim = 6
    w = AttentionWeights(
        query=LinearWeights(rng.standard_normal((dim, dim)), np.zeros(dim)),
        key=LinearWeights(rng.standard_normal((dim, dim)), np.zeros(dim)),
        value=LinearWeights(np.eye(dim), None),
        out=LinearWeights(np.eye(dim), None),
    )
    keys = rng.standard_normal((9, dim))
    out = multi_head_attention(rng.standard_normal((4, dim)), keys, keys, w, 1)
    assert (out.min(axis=0) >= keys.min(axis=0) - 1e-12).all()
    assert (out.max(axis=0) <= keys.max(axis=0) + 1e-12).all()
