"""Windowed attention support: partition/merge, enlarged key windows, local STGM.

Semantic tokens for windowed backbones are generated per window: each w x w
window pools its own ws x ws centers and attends over an enlarged w_k x w_k
key region gathered around it (clamped inward at map boundaries, never padded).
Downstream semantic layers alternate between attention inside each window's
token group and a cross-window layer over larger tiles of the semantic grid,
which saturates to plain global attention once the grid fits in one tile.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import TransformerLayerWeights, transformer_layer
from .errors import ConfigError, ShapeError
from .generation import (
    GenerationWeights,
    SemanticTokenSet,
    WindowGrid,
    generation_layer1,
    generation_layer2,
    init_centers_adaptive,
    init_centers_intra_inter,
)
from .ops import Array


@dataclass(frozen=True)
class WindowPartition:
    """Window layout plus the STGM key-window schedule for that layout."""

    grid: tuple                      # (rows, cols) of windows
    window_size: int                 # w, tokens per window side
    key_window_size: tuple           # (w_k layer 1, w_k layer 2)
    per_window_semantic: int         # ws, semantic tokens per window side

    def __post_init__(self):
        for w_k in self.key_window_size:
            if w_k < self.window_size:
                raise ConfigError(
                    f"key window {w_k} smaller than query window {self.window_size}"
                )

    @property
    def windows(self) -> int:
        return self.grid[0] * self.grid[1]


def make_partition(h: int, w: int, window: int, key_windows: tuple, semantic_side: int) -> WindowPartition:
    """Partition an h x w map into window-sized tiles; non-divisible maps are an error."""
    if h % window or w % window:
        raise ConfigError(f"map ({h}, {w}) not divisible by window size {window}")
    return WindowPartition((h // window, w // window), window, key_windows, semantic_side)


def partition(x: Array, window: int) -> Array:
    """Split [H,W,C] into [n_windows, window*window, C], windows and tokens row-major."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"partition expects [H,W,C], got {x.shape}")
    h, w, channels = x.shape
    if h % window or w % window:
        raise ConfigError(f"map ({h}, {w}) not divisible by window size {window}")
    rows, cols = h // window, w // window
    tiled = x.reshape(rows, window, cols, window, channels)
    return tiled.transpose(0, 2, 1, 3, 4).reshape(rows * cols, window * window, channels)


def merge(windows: Array, grid: tuple, window: int) -> Array:
    """Inverse of partition: [n_windows, window*window, C] back to [H,W,C]."""
    windows = np.asarray(windows)
    rows, cols = grid
    if windows.shape[0] != rows * cols:
        raise ShapeError(f"{windows.shape[0]} windows do not fill a {rows}x{cols} grid")
    channels = windows.shape[2]
    tiled = windows.reshape(rows, cols, window, window, channels)
    return tiled.transpose(0, 2, 1, 3, 4).reshape(rows * window, cols * window, channels)


def _clamped_start(window_start: int, window: int, key_window: int, extent: int) -> tuple:
    """Start index and size of the enlarged key region along one axis."""
    size = min(key_window, extent)
    start = window_start - (key_window - window) // 2
    start = min(max(start, 0), extent - size)
    return start, size


def gather_key_window(x: Array, window_index: int, window: int, key_window: int) -> Array:
    """Tokens of the key region centered on the indexed window, clamped to the map."""
    x = np.asarray(x)
    if key_window < window:
        raise ConfigError(f"key window {key_window} smaller than query window {window}")
    h, w, channels = x.shape
    cols = w // window
    wi, wj = divmod(window_index, cols)
    r0, rn = _clamped_start(wi * window, window, key_window, h)
    c0, cn = _clamped_start(wj * window, window, key_window, w)
    return x[r0:r0 + rn, c0:c0 + cn, :].reshape(rn * cn, channels)


def _check_tiling(x: Array, part: WindowPartition) -> None:
    h, w = x.shape[0], x.shape[1]
    rows, cols = part.grid
    if rows * part.window_size != h or cols * part.window_size != w:
        raise ConfigError(f"partition {part.grid} x {part.window_size} does not tile ({h}, {w})")


def local_stgm_layer1(
    x: Array,
    part: WindowPartition,
    weights: GenerationWeights,
    mode: str = "intra_inter",
    centers_override: Array = None,
) -> list:
    """Per-window pooling plus the first generation layer; returns one S1 per window.

    centers_override, when given, supplies the initial centers window-major
    and skips pooling entirely (semantic-token reuse across dumbbell units).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"local_stgm expects [H,W,C], got {x.shape}")
    _check_tiling(x, part)
    channels = x.shape[2]
    side = part.per_window_semantic
    per = side * side
    wk1 = part.key_window_size[0]
    window_maps = partition(x, part.window_size)

    outputs = []
    for idx in range(part.windows):
        if centers_override is not None:
            centers = np.asarray(centers_override)[idx * per:(idx + 1) * per]
        else:
            window_map = window_maps[idx].reshape(part.window_size, part.window_size, channels)
            if mode == "adaptive":
                centers = init_centers_adaptive(window_map, side)
            elif mode == "intra_inter":
                if weights.pooling is None:
                    raise ConfigError("intra_inter mode requires pooling weights")
                centers = init_centers_intra_inter(window_map, side, weights.pooling)
            else:
                raise ConfigError(f"unknown pooling mode {mode!r}")
        keys1 = gather_key_window(x, idx, part.window_size, wk1)
        outputs.append(generation_layer1(centers, keys1, weights.layer1))
    return outputs


def local_stgm_layer2(
    x: Array,
    part: WindowPartition,
    weights: GenerationWeights,
    s1_per_window: list,
    origin_layer: int = 0,
) -> SemanticTokenSet:
    """Second generation layer per window: keys are own S1 plus the enlarged key region."""
    x = np.asarray(x)
    side = part.per_window_semantic
    if weights.global_centers.shape[0] != side * side:
        raise ShapeError(
            f"global centers {weights.global_centers.shape[0]} != per-window count {side * side}"
        )
    wk2 = part.key_window_size[1]
    outputs = []
    for idx in range(part.windows):
        keys2 = gather_key_window(x, idx, part.window_size, wk2)
        outputs.append(
            generation_layer2(s1_per_window[idx], weights.global_centers, keys2, weights.layer2)
        )
    tokens = np.concatenate(outputs, axis=0)
    return SemanticTokenSet(tokens, origin_layer, WindowGrid(part.grid[0], part.grid[1], side))


def local_stgm(
    x: Array,
    part: WindowPartition,
    weights: GenerationWeights,
    mode: str = "intra_inter",
    origin_layer: int = 0,
) -> SemanticTokenSet:
    """Per-window semantic token generation with enlarged key windows.

    Every window pools its own centers, then runs both generation layers with
    keys gathered from the w_k regions around it. The learnable global centers
    are shared across windows. Output tokens are window-major.
    """
    s1 = local_stgm_layer1(x, part, weights, mode)
    return local_stgm_layer2(x, part, weights, s1, origin_layer)


def semantic_local_attention(
    s: SemanticTokenSet, w: TransformerLayerWeights
) -> SemanticTokenSet:
    """Self-attention restricted to each window's own semantic tokens."""
    if s.window_grid is None:
        raise ConfigError("semantic local attention needs window grid metadata")
    per = s.window_grid.per_window
    blocks = [
        transformer_layer(s.tokens[k * per:(k + 1) * per], w)
        for k in range(s.window_grid.windows)
    ]
    return SemanticTokenSet(np.concatenate(blocks, axis=0), s.origin_layer, s.window_grid)


def semantic_index_grid(grid: WindowGrid) -> Array:
    """Flat window-major token indices arranged on the full semantic grid."""
    rows, cols, side = grid.rows, grid.cols, grid.side
    idx = np.arange(rows * cols * side * side)
    idx = idx.reshape(rows, cols, side, side)
    return idx.transpose(0, 2, 1, 3).reshape(rows * side, cols * side)


def cross_window_attention(
    s: SemanticTokenSet, w: TransformerLayerWeights, span_multiplier: int = 4
) -> SemanticTokenSet:
    """Self-attention over enlarged tiles of the semantic grid.

    Tiles span span_multiplier*ws tokens per side and do not overlap. A grid
    that fits inside a single tile degenerates to global self-attention.
    """
    if s.window_grid is None:
        raise ConfigError("cross-window attention needs window grid metadata")
    grid = s.window_grid
    span = span_multiplier * grid.side
    grid_h, grid_w = grid.rows * grid.side, grid.cols * grid.side
    if grid_h <= span and grid_w <= span:
        return SemanticTokenSet(transformer_layer(s.tokens, w), s.origin_layer, grid)

    index_grid = semantic_index_grid(grid)
    out = np.empty_like(np.asarray(s.tokens))
    for r0 in range(0, grid_h, span):
        for c0 in range(0, grid_w, span):
            flat = index_grid[r0:r0 + span, c0:c0 + span].reshape(-1)
            out[flat] = transformer_layer(s.tokens[flat], w)
    return SemanticTokenSet(out, s.origin_layer, grid)
