"""Multi-head attention, feed-forward, and the pre-norm layer blocks.

Convention used everywhere: the residual stream entering a block is layer
normalized before its attention or feed-forward sub-block (pre-norm), while
cross-attention keys and values enter as raw tokens. Query offsets (the
learnable global centers of the second generation layer) are added after the
query norm so attention logits stay linear in the offset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import (
    Array,
    LayerNormParams,
    LinearWeights,
    gelu,
    layer_norm,
    linear,
    matmul,
    softmax_rows,
)


@dataclass
class AttentionWeights:
    query: LinearWeights
    key: LinearWeights
    value: LinearWeights
    out: LinearWeights


@dataclass
class FeedForwardWeights:
    expand: LinearWeights
    project: LinearWeights


@dataclass
class TransformerLayerWeights:
    """One pre-norm block: norms, attention projections, feed-forward, head count."""

    attn_norm: LayerNormParams
    attn: AttentionWeights
    ffn_norm: LayerNormParams
    ffn: FeedForwardWeights
    heads: int
    norm_eps: float = 1e-5


def split_heads(x: Array, heads: int) -> Array:
    """[n, C] -> [heads, n, C/heads]."""
    n, channels = x.shape
    if channels % heads != 0:
        raise ConfigError(f"head count {heads} does not divide channel width {channels}")
    return x.reshape(n, heads, channels // heads).transpose(1, 0, 2)


def merge_heads(x: Array) -> Array:
    """[heads, n, d] -> [n, heads*d]."""
    heads, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, heads * d)


def attention_scores(q: Array, k: Array, heads: int) -> Array:
    """Scaled pre-softmax logits [heads, n_q, n_k] from projected queries and keys."""
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query width {q.shape} differs from key width {k.shape}")
    head_dim = q.shape[1] // heads
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    return matmul(qh, np.swapaxes(kh, 1, 2)) / math.sqrt(head_dim)


def multi_head_attention(
    queries: Array,
    keys: Array,
    values: Array,
    w: AttentionWeights,
    heads: int,
    return_attention: bool = False,
):
    """Projected multi-head attention; no residual, no norms.

    Returns the output tokens, or (output, attention) with attention shaped
    [heads, n_q, n_k] when requested.
    """
    if keys.shape != values.shape:
        raise ShapeError(f"key shape {keys.shape} differs from value shape {values.shape}")
    q = linear(queries, w.query)
    k = linear(keys, w.key)
    v = linear(values, w.value)
    attn = softmax_rows(attention_scores(q, k, heads))
    context = merge_heads(matmul(attn, split_heads(v, heads)))
    out = linear(context, w.out)
    if return_attention:
        return out, attn
    return out


def feed_forward(x: Array, w: FeedForwardWeights) -> Array:
    return linear(gelu(linear(x, w.expand)), w.project)


def transformer_layer(x: Array, w: TransformerLayerWeights, return_attention: bool = False):
    """Pre-norm self-attention block with residuals."""
    normed = layer_norm(x, w.attn_norm.gamma, w.attn_norm.beta, w.norm_eps)
    attended = multi_head_attention(normed, normed, normed, w.attn, w.heads, return_attention)
    if return_attention:
        attended, attn = attended
    x = x + attended
    x = x + feed_forward(layer_norm(x, w.ffn_norm.gamma, w.ffn_norm.beta, w.norm_eps), w.ffn)
    if return_attention:
        return x, attn
    return x


def cross_attention_layer(
    queries: Array,
    keys_values: Array,
    w: TransformerLayerWeights,
    query_offset: Optional[Array] = None,
    return_attention: bool = False,
):
    """Pre-norm cross-attention block: normed queries, raw keys/values, residuals."""
    normed_q = layer_norm(queries, w.attn_norm.gamma, w.attn_norm.beta, w.norm_eps)
    if query_offset is not None:
        if query_offset.shape != normed_q.shape:
            raise ShapeError(
                f"query offset shape {query_offset.shape} differs from queries {normed_q.shape}"
            )
        normed_q = normed_q + query_offset
    attended = multi_head_attention(
        normed_q, keys_values, keys_values, w.attn, w.heads, return_attention
    )
    if return_attention:
        attended, attn = attended
    out = queries + attended
    out = out + feed_forward(layer_norm(out, w.ffn_norm.gamma, w.ffn_norm.beta, w.norm_eps), w.ffn)
    if return_attention:
        return out, attn
    return out


# ---------------------------------------------------------------------------
# initialization helpers

INIT_STD = 0.02


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True) -> LinearWeights:
    weight = rng.normal(0.0, INIT_STD, size=(n_in, n_out))
    return LinearWeights(weight, np.zeros(n_out) if bias else None)


def init_layer_norm(channels: int) -> LayerNormParams:
    return LayerNormParams(np.ones(channels), np.zeros(channels))


def init_transformer_layer(
    rng: np.random.Generator, channels: int, heads: int, ffn_ratio: int = 4, norm_eps: float = 1e-5
) -> TransformerLayerWeights:
    if channels % heads != 0:
        raise ConfigError(f"head count {heads} does not divide channel width {channels}")
    hidden = channels * ffn_ratio
    return TransformerLayerWeights(
        attn_norm=init_layer_norm(channels),
        attn=AttentionWeights(
            query=init_linear(rng, channels, channels),
            key=init_linear(rng, channels, channels),
            value=init_linear(rng, channels, channels),
            out=init_linear(rng, channels, channels),
        ),
        ffn_norm=init_layer_norm(channels),
        ffn=FeedForwardWeights(
            expand=init_linear(rng, channels, hidden),
            project=init_linear(rng, hidden, channels),
        ),
        heads=heads,
        norm_eps=norm_eps,
    )
