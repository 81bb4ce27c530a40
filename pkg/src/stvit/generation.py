"""Semantic token generation: pooled cluster centers plus two attention layers.

The first layer queries the pooled centers against image tokens; the second
adds learnable global centers to the queries and attends over the semantic
tokens concatenated with the image tokens. Image tokens are never modified.

Center initialization comes in two modes. "adaptive" is the non-parameterized
spatial pool. "intra_inter" runs two lightweight conv nets: a per-window net
scoring each token and a cross-window net producing offset logits from the
pooled summaries; centers are softmax(token scores + offsets) mixtures of the
window's tokens. Windows follow the disjoint floor-boundary partition, so
grids that are not divisible by the center grid side simply get unequal
windows; the offset net's channel width is the largest window token count and
each window slices its own prefix. There is no padding path.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import (
    INIT_STD,
    TransformerLayerWeights,
    cross_attention_layer,
    init_transformer_layer,
)
from .errors import ConfigError, ShapeError
from .ops import (
    Array,
    LayerNormParams,
    LinearWeights,
    adaptive_avg_pool,
    depthwise_conv2d,
    gelu,
    layer_norm,
    linear,
    matmul,
    softmax_rows,
)

POOL_KERNEL = 3


@dataclass
class PoolingWeights:
    """Intra-window token scorer and inter-window offset net (Eq. style: conv, norm, GELU, conv)."""

    intra_kernel: Array              # [3, 3, C] depthwise
    intra_norm: LayerNormParams
    intra_point: LinearWeights       # C -> 1
    inter_kernel: Array              # [3, 3, C] depthwise over the center grid
    inter_norm: LayerNormParams
    inter_point: LinearWeights       # C -> max window token count


@dataclass
class GenerationWeights:
    layer1: TransformerLayerWeights
    layer2: TransformerLayerWeights
    global_centers: Array            # [n_semantic, C]
    pooling: Optional[PoolingWeights] = None


@dataclass(frozen=True)
class WindowGrid:
    """Layout of semantic tokens: rows x cols windows, side x side tokens each."""

    rows: int
    cols: int
    side: int

    @property
    def per_window(self) -> int:
        return self.side * self.side

    @property
    def windows(self) -> int:
        return self.rows * self.cols


@dataclass
class SemanticTokenSet:
    tokens: Array                    # [n_semantic, C]
    origin_layer: int
    window_grid: Optional[WindowGrid] = None


def partition_edges(extent: int, parts: int) -> list:
    """Disjoint partition boundaries floor(i*extent/parts); unequal when not divisible."""
    return [(i * extent) // parts for i in range(parts + 1)]


def max_window_tokens(h: int, w: int, side: int) -> int:
    """Largest token count over the side x side floor-partition windows of an h x w grid."""
    rows = partition_edges(h, side)
    cols = partition_edges(w, side)
    tallest = max(rows[i + 1] - rows[i] for i in range(side))
    widest = max(cols[j + 1] - cols[j] for j in range(side))
    return tallest * widest


def _check_side(h: int, w: int, side: int) -> None:
    if side < 1:
        raise ConfigError(f"center grid side must be >= 1, got {side}")
    if side > h or side > w:
        raise ConfigError(f"center grid side {side} exceeds map extents ({h}, {w})")


def init_centers_adaptive(x: Array, side: int) -> Array:
    """Pool an [H,W,C] map to side*side centers, flattened row-major."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"init_centers_adaptive expects [H,W,C], got {x.shape}")
    _check_side(x.shape[0], x.shape[1], side)
    return adaptive_avg_pool(x, side, side).reshape(side * side, x.shape[2])


def _intra_logits(window: Array, net: PoolingWeights, eps: float) -> Array:
    """Per-token mask logits for one window map [h, w, C] -> flat [h*w]."""
    h, w, channels = window.shape
    mixed = depthwise_conv2d(window, net.intra_kernel)
    flat = mixed.reshape(h * w, channels)
    flat = gelu(layer_norm(flat, net.intra_norm.gamma, net.intra_norm.beta, eps))
    return linear(flat, net.intra_point).reshape(h * w)


def init_centers_intra_inter(x: Array, side: int, net: PoolingWeights, eps: float = 1e-5) -> Array:
    """Centers from intra-window scores plus inter-window offsets (one per window)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"init_centers_intra_inter expects [H,W,C], got {x.shape}")
    h, w, channels = x.shape
    _check_side(h, w, side)
    cap = max_window_tokens(h, w, side)
    if net.inter_point.weight.shape[1] < cap:
        raise ShapeError(
            f"inter net width {net.inter_point.weight.shape[1]} below max window token count {cap}"
        )
    row_edges = partition_edges(h, side)
    col_edges = partition_edges(w, side)

    masks = []
    summaries = np.empty((side, side, channels), dtype=np.float64)
    for i in range(side):
        for j in range(side):
            window = x[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1], :]
            tokens = window.reshape(-1, channels)
            mask = _intra_logits(window, net, eps)
            masks.append((mask, tokens))
            summaries[i, j, :] = matmul(softmax_rows(mask[np.newaxis, :]), tokens)[0]

    mixed = depthwise_conv2d(summaries, net.inter_kernel)
    flat = gelu(layer_norm(mixed.reshape(side * side, channels), net.inter_norm.gamma,
                           net.inter_norm.beta, eps))
    offsets = linear(flat, net.inter_point)          # [side*side, cap]

    centers = np.empty((side * side, channels), dtype=np.float64)
    for idx, (mask, tokens) in enumerate(masks):
        combined = mask + offsets[idx, :mask.shape[0]]
        centers[idx, :] = matmul(softmax_rows(combined[np.newaxis, :]), tokens)[0]
    return centers


def generation_layer1(
    centers: Array, image_tokens: Array, w: TransformerLayerWeights, return_attention: bool = False
):
    """First generation layer: centers query the image tokens; image tokens unchanged."""
    return cross_attention_layer(centers, image_tokens, w, return_attention=return_attention)


def generation_layer2(
    s1: Array,
    global_centers: Array,
    image_tokens: Optional[Array],
    w: TransformerLayerWeights,
    return_attention: bool = False,
):
    """Second generation layer: queries s1 + global centers, keys/values concat(s1, image).

    Pass image_tokens=None to attend over the semantic tokens alone. The global
    centers are added to queries only, never to keys or values.
    """
    if global_centers.shape != s1.shape:
        raise ShapeError(
            f"global centers shape {global_centers.shape} differs from tokens {s1.shape}"
        )
    keys = s1 if image_tokens is None else np.concatenate([s1, image_tokens], axis=0)
    return cross_attention_layer(
        s1, keys, w, query_offset=global_centers, return_attention=return_attention
    )


def generate_semantic_tokens(
    x_tokens: Array,
    grid: tuple,
    weights: GenerationWeights,
    mode: str = "intra_inter",
    side: Optional[int] = None,
    origin_layer: int = 0,
) -> SemanticTokenSet:
    """Run both generation layers over a flat [N, C] token matrix on an (H, W) grid."""
    x_tokens = np.asarray(x_tokens)
    h, w = grid
    if x_tokens.ndim != 2 or x_tokens.shape[0] != h * w:
        raise ShapeError(f"token matrix {x_tokens.shape} does not cover grid {grid}")
    if side is None:
        side = int(round(len(weights.global_centers) ** 0.5))
    if side * side != weights.global_centers.shape[0]:
        raise ConfigError(
            f"global centers count {weights.global_centers.shape[0]} is not a square grid"
        )
    x_map = x_tokens.reshape(h, w, x_tokens.shape[1])
    if mode == "adaptive":
        centers = init_centers_adaptive(x_map, side)
    elif mode == "intra_inter":
        if weights.pooling is None:
            raise ConfigError("intra_inter mode requires pooling weights")
        centers = init_centers_intra_inter(x_map, side, weights.pooling)
    else:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    s1 = generation_layer1(centers, x_tokens, weights.layer1)
    s2 = generation_layer2(s1, weights.global_centers, x_tokens, weights.layer2)
    return SemanticTokenSet(s2, origin_layer, WindowGrid(1, 1, side))


def init_pooling_weights(rng: np.random.Generator, channels: int, max_tokens: int) -> PoolingWeights:
    return PoolingWeights(
        intra_kernel=rng.normal(0.0, INIT_STD, size=(POOL_KERNEL, POOL_KERNEL, channels)),
        intra_norm=LayerNormParams(np.ones(channels), np.zeros(channels)),
        intra_point=LinearWeights(rng.normal(0.0, INIT_STD, size=(channels, 1)), np.zeros(1)),
        inter_kernel=rng.normal(0.0, INIT_STD, size=(POOL_KERNEL, POOL_KERNEL, channels)),
        inter_norm=LayerNormParams(np.ones(channels), np.zeros(channels)),
        inter_point=LinearWeights(
            rng.normal(0.0, INIT_STD, size=(channels, max_tokens)), np.zeros(max_tokens)
        ),
    )


def init_generation_weights(
    rng: np.random.Generator,
    channels: int,
    heads: int,
    n_semantic: int,
    pooling_max_tokens: Optional[int],
    ffn_ratio: int = 4,
    norm_eps: float = 1e-5,
) -> GenerationWeights:
    """Fresh generation weights; pass pooling_max_tokens=None for adaptive mode."""
    pooling = None
    if pooling_max_tokens is not None:
        pooling = init_pooling_weights(rng, channels, pooling_max_tokens)
    return GenerationWeights(
        layer1=init_transformer_layer(rng, channels, heads, ffn_ratio, norm_eps),
        layer2=init_transformer_layer(rng, channels, heads, ffn_ratio, norm_eps),
        global_centers=rng.normal(0.0, INIT_STD, size=(n_semantic, channels)),
        pooling=pooling,
    )
