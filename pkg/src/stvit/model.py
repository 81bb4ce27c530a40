"""Full forward-pass models: patch embed, token layers, semantic stages, head.

Two families share one config type. The plain path runs base layers on image
tokens, generates semantic tokens once, and finishes every remaining layer on
the much smaller semantic set before mean pooling into the classifier. The
dumbbell path restores image tokens after each short semantic stage: a unit is
part-1 image layers, the two generation layers, part-3 semantic layers, and a
recovery layer whose queries are part-1's output carried unchanged across the
middle parts. Traces record one entry per depth slot so the analytic cost
model can be checked row by row against instrumented multiply counts.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import (
    TransformerLayerWeights,
    cross_attention_layer,
    init_transformer_layer,
    transformer_layer,
)
from .errors import ConfigError, ShapeError
from .generation import (
    GenerationWeights,
    SemanticTokenSet,
    WindowGrid,
    generation_layer1,
    generation_layer2,
    init_centers_adaptive,
    init_centers_intra_inter,
    init_generation_weights,
    max_window_tokens,
)
from .ops import Array, LinearWeights, linear, mac_scope
from .windows import (
    WindowPartition,
    cross_window_attention,
    local_stgm_layer1,
    local_stgm_layer2,
    merge,
    partition,
    semantic_index_grid,
    semantic_local_attention,
)

VARIANTS = ("global", "local")
POOLING_MODES = ("adaptive", "intra_inter")


@dataclass
class ModelConfig:
    """Everything needed to build and run one model."""

    variant: str = "global"
    depth: int = 12
    channels: int = 384
    heads: int = 6
    image_grid: tuple = (14, 14)
    patch: int = 16
    classes: int = 1000
    semantic_side: int = 4
    stgm_position: Optional[int] = 4   # None: plain backbone, no semantic stage
    pooling: str = "intra_inter"
    dumbbell: Optional[list] = None
    recovery_windows: Optional[tuple] = None
    window: int = 7
    key_windows: tuple = (10, 14)
    span_multiplier: int = 4
    reuse_semantic: bool = False
    ffn_ratio: int = 4
    norm_eps: float = 1e-5

    def image_tokens(self) -> int:
        return self.image_grid[0] * self.image_grid[1]

    def semantic_tokens(self) -> int:
        per = self.semantic_side * self.semantic_side
        if self.variant == "local":
            h, w = self.image_grid
            return per * (h // self.window) * (w // self.window)
        return per

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.semantic_side < 1:
            raise ConfigError(f"semantic_side must be >= 1, got {self.semantic_side}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.dumbbell is not None:
            total = 0
            for unit in self.dumbbell:
                if len(unit) != 4:
                    raise ConfigError(f"dumbbell unit {unit} must have four part sizes")
                total += sum(unit)
            if total != self.depth:
                raise ConfigError(f"dumbbell parts sum to {total}, depth is {self.depth}")
            if self.recovery_windows is None:
                raise ConfigError("dumbbell models need recovery_windows")
        elif self.stgm_position is not None:
            if self.stgm_position + 2 > self.depth:
                raise ConfigError(
                    f"stgm_position {self.stgm_position} + 2 exceeds depth {self.depth}"
                )
        if self.variant == "local":
            h, w = self.image_grid
            if h % self.window or w % self.window:
                raise ConfigError(f"image grid {self.image_grid} not tiled by window {self.window}")
            for w_k in self.key_windows:
                if w_k < self.window:
                    raise ConfigError(f"key window {w_k} below window size {self.window}")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "depth": self.depth,
            "channels": self.channels,
            "heads": self.heads,
            "image_grid": list(self.image_grid),
            "patch": self.patch,
            "classes": self.classes,
            "semantic_side": self.semantic_side,
            "stgm_position": self.stgm_position,
            "pooling": self.pooling,
            "dumbbell": None if self.dumbbell is None else [list(u) for u in self.dumbbell],
            "recovery_windows": None if self.recovery_windows is None
            else list(self.recovery_windows),
            "window": self.window,
            "key_windows": list(self.key_windows),
            "span_multiplier": self.span_multiplier,
            "reuse_semantic": self.reuse_semantic,
            "ffn_ratio": self.ffn_ratio,
            "norm_eps": self.norm_eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        kwargs = dict(data)
        for key in ("image_grid", "recovery_windows", "key_windows"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("dumbbell") is not None:
            kwargs["dumbbell"] = [tuple(u) for u in kwargs["dumbbell"]]
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class TraceEntry:
    """One depth slot of the forward pass."""

    name: str
    kind: str
    tokens_in: int
    tokens_out: int
    heads: int
    query_tokens: int    # per attention unit (largest, when units differ)
    key_tokens: int
    windows: int         # independent attention units in this slot
    elapsed_ms: float = 0.0
    attention: Optional[object] = None

    def to_dict(self, include_timings: bool = False, include_attention: bool = False) -> dict:
        out = {
            "name": self.name,
            "kind": self.kind,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "heads": self.heads,
            "query_tokens": self.query_tokens,
            "key_tokens": self.key_tokens,
            "windows": self.windows,
        }
        if include_timings:
            out["elapsed_ms"] = self.elapsed_ms
        if include_attention and self.attention is not None:
            if isinstance(self.attention, list):
                out["attention"] = [np.asarray(a).tolist() for a in self.attention]
            else:
                out["attention"] = np.asarray(self.attention).tolist()
        return out


@dataclass
class ForwardTrace:
    """Per-layer record of a forward pass."""

    entries: list = field(default_factory=list)
    image_tokens: int = 0
    semantic_tokens: int = 0
    classes: int = 0

    def token_schedule(self) -> list:
        return [(e.kind, e.tokens_out) for e in self.entries]

    def to_dict(self, include_timings: bool = False, include_attention: bool = False) -> dict:
        return {
            "image_tokens": self.image_tokens,
            "semantic_tokens": self.semantic_tokens,
            "classes": self.classes,
            "layers": [e.to_dict(include_timings, include_attention) for e in self.entries],
        }


@dataclass
class ModelWeights:
    patch_embed: LinearWeights
    pos_embed: Optional[Array]
    blocks: list
    head: LinearWeights


def slot_plan(config: ModelConfig) -> list:
    """(kind, block_index) per depth slot; the two generation slots share a block."""
    plan = []

    def semantic_kind(offset: int) -> str:
        if config.variant == "local":
            return "semantic_local" if offset % 2 == 0 else "cross_window"
        return "semantic"

    if config.dumbbell is not None:
        block = 0
        for unit in config.dumbbell:
            n_image, n_stgm, n_semantic, n_recovery = unit
            if n_stgm != 2:
                raise ConfigError(f"generation stage must be 2 layers, got {n_stgm}")
            for _ in range(n_image):
                plan.append(("image", block))
                block += 1
            plan.append(("stgm1", block))
            plan.append(("stgm2", block))
            block += 1
            for k in range(n_semantic):
                plan.append((semantic_kind(k), block))
                block += 1
            for _ in range(n_recovery):
                plan.append(("recovery", block))
                block += 1
        return plan

    if config.stgm_position is None:
        return [("image", i) for i in range(config.depth)]

    block = 0
    for _ in range(config.stgm_position):
        plan.append(("image", block))
        block += 1
    plan.append(("stgm1", block))
    plan.append(("stgm2", block))
    block += 1
    for k in range(config.depth - config.stgm_position - 2):
        plan.append((semantic_kind(k), block))
        block += 1
    return plan


def expected_schedule(config: ModelConfig) -> list:
    """Closed-form (kind, tokens_out) sequence the trace must reproduce."""
    n_i = config.image_tokens()
    n_s = config.semantic_tokens()
    out = []
    for kind, _ in slot_plan(config):
        if kind in ("image", "recovery"):
            out.append((kind, n_i))
        else:
            out.append((kind, n_s))
    return out


def _pooling_max_tokens(config: ModelConfig) -> Optional[int]:
    if config.pooling != "intra_inter":
        return None
    if config.variant == "local":
        return max_window_tokens(config.window, config.window, config.semantic_side)
    h, w = config.image_grid
    return max_window_tokens(h, w, config.semantic_side)


def init_model_weights(rng: np.random.Generator, config: ModelConfig) -> ModelWeights:
    """Fresh random weights laid out to match the config's layer plan."""
    config.validate()
    c = config.channels
    plan = slot_plan(config)
    blocks = []
    seen = -1
    for kind, block in plan:
        if block == seen:
            continue
        seen = block
        if kind == "stgm1":
            blocks.append(
                init_generation_weights(
                    rng, c, config.heads,
                    config.semantic_side * config.semantic_side,
                    _pooling_max_tokens(config),
                    config.ffn_ratio, config.norm_eps,
                )
            )
        else:
            blocks.append(
                init_transformer_layer(rng, c, config.heads, config.ffn_ratio, config.norm_eps)
            )
    n_in = config.patch * config.patch * 3
    pos = None
    if config.variant == "global":
        pos = rng.normal(0.0, 0.02, size=(config.image_tokens(), c))
    return ModelWeights(
        patch_embed=LinearWeights(rng.normal(0.0, 0.02, size=(n_in, c)), np.zeros(c)),
        pos_embed=pos,
        blocks=blocks,
        head=LinearWeights(rng.normal(0.0, 0.02, size=(c, config.classes)),
                           np.zeros(config.classes)),
    )


def patch_embed(image: Array, patch: int, w: LinearWeights) -> Array:
    """Non-overlapping patch flatten plus linear projection; [h,w,3] -> [N,C]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"patch_embed expects [h,w,3], got {image.shape}")
    h_px, w_px = image.shape[0], image.shape[1]
    if h_px % patch or w_px % patch:
        raise ConfigError(f"pixel extents ({h_px}, {w_px}) not divisible by patch {patch}")
    gh, gw = h_px // patch, w_px // patch
    patches = image.reshape(gh, patch, gw, patch, 3)
    patches = patches.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch * patch * 3)
    return linear(patches, w)


def recovery_layer(
    x_tokens: Array,
    s: SemanticTokenSet,
    recovery_windows: tuple,
    w: TransformerLayerWeights,
    image_grid: tuple,
    return_attention: bool = False,
):
    """Image tokens attend to their window's semantic tokens; token count restored.

    The semantic grid is regrouped into the recovery partition, so the window
    layout used at generation time does not have to match the recovery one as
    long as both cover the same semantic grid.
    """
    if s.window_grid is None:
        raise ConfigError("recovery needs semantic window grid metadata")
    w_r, ws_r = recovery_windows
    h, wdt = image_grid
    if h % w_r or wdt % w_r:
        raise ConfigError(f"image grid {image_grid} not tiled by recovery window {w_r}")
    rows_r, cols_r = h // w_r, wdt // w_r
    grid = s.window_grid
    sem_h, sem_w = grid.rows * grid.side, grid.cols * grid.side
    if sem_h != rows_r * ws_r or sem_w != cols_r * ws_r:
        raise ConfigError(
            f"incompatible partitions: semantic grid {sem_h}x{sem_w} vs "
            f"recovery {rows_r}x{cols_r} windows of {ws_r}"
        )
    x_tokens = np.asarray(x_tokens)
    channels = x_tokens.shape[1]
    x_map = x_tokens.reshape(h, wdt, channels)
    img_windows = partition(x_map, w_r)
    index_grid = semantic_index_grid(grid)

    out_windows = np.empty_like(img_windows)
    attns = []
    for wi in range(rows_r):
        for wj in range(cols_r):
            sem_idx = index_grid[wi * ws_r:(wi + 1) * ws_r, wj * ws_r:(wj + 1) * ws_r].reshape(-1)
            result = cross_attention_layer(
                img_windows[wi * cols_r + wj], s.tokens[sem_idx], w,
                return_attention=return_attention,
            )
            if return_attention:
                result, attn = result
                attns.append(attn)
            out_windows[wi * cols_r + wj] = result
    restored = merge(out_windows, (rows_r, cols_r), w_r).reshape(h * wdt, channels)
    if return_attention:
        return restored, attns
    return restored


def _window_image_layer(tokens, grid, window, w, return_attention=False):
    """Self-attention within each window of the image-token map."""
    h, wdt = grid
    channels = tokens.shape[1]
    maps = partition(tokens.reshape(h, wdt, channels), window)
    out = np.empty_like(maps)
    attns = []
    for k in range(maps.shape[0]):
        result = transformer_layer(maps[k], w, return_attention=return_attention)
        if return_attention:
            result, attn = result
            attns.append(attn)
        out[k] = result
    merged = merge(out, (h // window, wdt // window), window).reshape(h * wdt, channels)
    return (merged, attns) if return_attention else merged


def validate_weights(weights: ModelWeights, config: ModelConfig) -> None:
    """Raise one error naming every block whose weights do not fit the plan."""
    plan = slot_plan(config)
    problems = []
    c = config.channels
    n_in = config.patch * config.patch * 3
    if weights.patch_embed.weight.shape != (n_in, c):
        problems.append(
            f"patch_embed: expected {(n_in, c)}, got {weights.patch_embed.weight.shape}"
        )
    if config.variant == "global":
        want = (config.image_tokens(), c)
        if weights.pos_embed is None or weights.pos_embed.shape != want:
            got = None if weights.pos_embed is None else weights.pos_embed.shape
            problems.append(f"pos_embed: expected {want}, got {got}")
    n_blocks = max(b for _, b in plan) + 1
    if len(weights.blocks) != n_blocks:
        problems.append(f"blocks: expected {n_blocks}, got {len(weights.blocks)}")
    else:
        seen = -1
        for i, (kind, block) in enumerate(plan):
            if block == seen:
                continue
            seen = block
            want_cls = GenerationWeights if kind == "stgm1" else TransformerLayerWeights
            got = weights.blocks[block]
            if not isinstance(got, want_cls):
                problems.append(
                    f"layer_{i:02d} ({kind}): expected {want_cls.__name__}, "
                    f"got {type(got).__name__}"
                )
    if weights.head.weight.shape != (c, config.classes):
        problems.append(
            f"head: expected {(c, config.classes)}, got {weights.head.weight.shape}"
        )
    if problems:
        raise ConfigError("weights do not match config: " + "; ".join(problems))


def _initial_centers(x_map, config: ModelConfig, gen: GenerationWeights, override):
    if override is not None:
        return override
    if config.pooling == "adaptive":
        return init_centers_adaptive(x_map, config.semantic_side)
    if gen.pooling is None:
        raise ConfigError("intra_inter pooling selected but no pooling weights present")
    return init_centers_intra_inter(x_map, config.semantic_side, gen.pooling)


def forward(weights: ModelWeights, config: ModelConfig, image: Array,
            export_attention: bool = False):
    """Run the configured model on one image; returns (logits, trace)."""
    config.validate()
    validate_weights(weights, config)
    h, w_grid = config.image_grid
    n_i = config.image_tokens()
    channels = config.channels
    heads = config.heads
    side = config.semantic_side
    per = side * side

    with mac_scope("embed"):
        tokens = patch_embed(image, config.patch, weights.patch_embed)
        if tokens.shape[0] != n_i:
            raise ConfigError(f"patch grid yields {tokens.shape[0]} tokens, config says {n_i}")
        if weights.pos_embed is not None:
            tokens = tokens + weights.pos_embed

    part = None
    if config.variant == "local":
        part = WindowPartition(
            (h // config.window, w_grid // config.window),
            config.window, config.key_windows, side,
        )

    plan = slot_plan(config)
    entries = []
    x_image = tokens
    sem: Optional[SemanticTokenSet] = None
    prev_semantic: Optional[SemanticTokenSet] = None
    s1_state = None

    for i, (kind, block) in enumerate(plan):
        name = f"layer_{i:02d}"
        bw = weights.blocks[block]
        started = time.perf_counter()
        attention = None
        with mac_scope(name):
            if kind == "image":
                if config.variant == "local":
                    x_image, attns = _window_image_layer(
                        x_image, config.image_grid, config.window, bw, return_attention=True)
                    attention = attns
                    n_win = part.windows
                    q_tok = k_tok = config.window * config.window
                else:
                    x_image, attention = transformer_layer(x_image, bw, return_attention=True)
                    n_win, q_tok, k_tok = 1, n_i, n_i
                entry = TraceEntry(name, kind, n_i, n_i, heads, q_tok, k_tok, n_win)
            elif kind == "stgm1":
                override = prev_semantic.tokens if (
                    config.reuse_semantic and prev_semantic is not None) else None
                if config.variant == "local":
                    s1_state = local_stgm_layer1(
                        x_image.reshape(h, w_grid, channels), part, bw,
                        config.pooling, centers_override=override)
                    k_tok = min(config.key_windows[0], h) * min(config.key_windows[0], w_grid)
                    entry = TraceEntry(name, kind, n_i, per * part.windows, heads,
                                       per, k_tok, part.windows)
                else:
                    centers = _initial_centers(
                        x_image.reshape(h, w_grid, channels), config, bw, override)
                    s1_state, attention = generation_layer1(
                        centers, x_image, bw.layer1, return_attention=True)
                    entry = TraceEntry(name, kind, n_i, per, heads, per, n_i, 1)
            elif kind == "stgm2":
                if config.variant == "local":
                    sem = local_stgm_layer2(
                        x_image.reshape(h, w_grid, channels), part, bw, s1_state,
                        origin_layer=i)
                    k_tok = per + min(config.key_windows[1], h) * min(config.key_windows[1], w_grid)
                    entry = TraceEntry(name, kind, per * part.windows, per * part.windows,
                                       heads, per, k_tok, part.windows)
                else:
                    s2, attention = generation_layer2(
                        s1_state, bw.global_centers, x_image, bw.layer2, return_attention=True)
                    sem = SemanticTokenSet(s2, i, WindowGrid(1, 1, side))
                    entry = TraceEntry(name, kind, per, per, heads, per, per + n_i, 1)
                prev_semantic = sem
                s1_state = None
            elif kind == "semantic":
                out, attention = transformer_layer(sem.tokens, bw, return_attention=True)
                sem = SemanticTokenSet(out, sem.origin_layer, sem.window_grid)
                m = out.shape[0]
                entry = TraceEntry(name, kind, m, m, heads, m, m, 1)
            elif kind == "semantic_local":
                sem = semantic_local_attention(sem, bw)
                m = sem.tokens.shape[0]
                entry = TraceEntry(name, kind, m, m, heads, per, per, sem.window_grid.windows)
            elif kind == "cross_window":
                sem = cross_window_attention(sem, bw, config.span_multiplier)
                m = sem.tokens.shape[0]
                span = config.span_multiplier * side
                g_h = sem.window_grid.rows * side
                g_w = sem.window_grid.cols * side
                if g_h <= span and g_w <= span:
                    n_win, q_tok = 1, m
                else:
                    tiles_h = -(-g_h // span)
                    tiles_w = -(-g_w // span)
                    n_win = tiles_h * tiles_w
                    q_tok = min(span, g_h) * min(span, g_w)
                entry = TraceEntry(name, kind, m, m, heads, q_tok, q_tok, n_win)
            elif kind == "recovery":
                m = sem.tokens.shape[0]
                x_image, attention = recovery_layer(
                    x_image, sem, config.recovery_windows, bw, config.image_grid,
                    return_attention=True)
                w_r, ws_r = config.recovery_windows
                n_win = (h // w_r) * (w_grid // w_r)
                entry = TraceEntry(name, kind, n_i, n_i, heads,
                                   w_r * w_r, ws_r * ws_r, n_win)
            else:
                raise ConfigError(f"unknown slot kind {kind!r}")
        entry.elapsed_ms = (time.perf_counter() - started) * 1000.0
        if export_attention:
            entry.attention = attention
        entries.append(entry)

    final = sem.tokens if sem is not None and config.dumbbell is None else x_image
    with mac_scope("head"):
        pooled = final.mean(axis=0)
        logits = linear(pooled[np.newaxis, :], weights.head)[0]

    trace = ForwardTrace(entries, n_i, config.semantic_tokens(), config.classes)
    return logits, trace


# Weight (de)serialization: flat name -> tensor maps for the on-disk format.

def _layer_items(prefix: str, w: TransformerLayerWeights) -> list:
    items = [
        (prefix + "attn_norm.gamma", w.attn_norm.gamma),
        (prefix + "attn_norm.beta", w.attn_norm.beta),
    ]
    for field_name, lin in (("query", w.attn.query), ("key", w.attn.key),
                            ("value", w.attn.value), ("out", w.attn.out)):
        items.append((f"{prefix}attn.{field_name}.weight", lin.weight))
        items.append((f"{prefix}attn.{field_name}.bias", lin.bias))
    items += [
        (prefix + "ffn_norm.gamma", w.ffn_norm.gamma),
        (prefix + "ffn_norm.beta", w.ffn_norm.beta),
        (prefix + "ffn.expand.weight", w.ffn.expand.weight),
        (prefix + "ffn.expand.bias", w.ffn.expand.bias),
        (prefix + "ffn.project.weight", w.ffn.project.weight),
        (prefix + "ffn.project.bias", w.ffn.project.bias),
    ]
    return items


def _generation_items(prefix: str, g: GenerationWeights) -> list:
    items = _layer_items(prefix + "layer1.", g.layer1)
    items += _layer_items(prefix + "layer2.", g.layer2)
    items.append((prefix + "global_centers", g.global_centers))
    if g.pooling is not None:
        p = g.pooling
        items += [
            (prefix + "pooling.intra_kernel", p.intra_kernel),
            (prefix + "pooling.intra_norm.gamma", p.intra_norm.gamma),
            (prefix + "pooling.intra_norm.beta", p.intra_norm.beta),
            (prefix + "pooling.intra_point.weight", p.intra_point.weight),
            (prefix + "pooling.intra_point.bias", p.intra_point.bias),
            (prefix + "pooling.inter_kernel", p.inter_kernel),
            (prefix + "pooling.inter_norm.gamma", p.inter_norm.gamma),
            (prefix + "pooling.inter_norm.beta", p.inter_norm.beta),
            (prefix + "pooling.inter_point.weight", p.inter_point.weight),
            (prefix + "pooling.inter_point.bias", p.inter_point.bias),
        ]
    return items


def _block_prefixes(config: ModelConfig) -> list:
    """(prefix, kind, block_index) per block, named by first depth slot."""
    plan = slot_plan(config)
    out = []
    seen = -1
    for i, (kind, block) in enumerate(plan):
        if block == seen:
            continue
        seen = block
        if kind == "stgm1":
            out.append((f"stgm_{i:02d}.", "stgm", block))
        else:
            out.append((f"layer_{i:02d}.", kind, block))
    return out


def flatten_weights(weights: ModelWeights, config: ModelConfig) -> dict:
    items = [("patch_embed.weight", weights.patch_embed.weight),
             ("patch_embed.bias", weights.patch_embed.bias)]
    if weights.pos_embed is not None:
        items.append(("pos_embed", weights.pos_embed))
    for prefix, kind, block in _block_prefixes(config):
        if kind == "stgm":
            items += _generation_items(prefix, weights.blocks[block])
        else:
            items += _layer_items(prefix, weights.blocks[block])
    items += [("head.weight", weights.head.weight), ("head.bias", weights.head.bias)]
    return dict(items)


def unflatten_weights(tensors: dict, config: ModelConfig) -> ModelWeights:
    from .attention import AttentionWeights, FeedForwardWeights
    from .generation import PoolingWeights
    from .ops import LayerNormParams

    missing = []

    def take(name):
        if name not in tensors:
            missing.append(name)
            return None
        return tensors[name]

    def layer_from(prefix):
        names = [item[0] for item in _layer_items(prefix, _LAYER_TEMPLATE)]
        vals = {n[len(prefix):]: take(n) for n in names}
        if missing:
            return None
        return TransformerLayerWeights(
            attn_norm=LayerNormParams(vals["attn_norm.gamma"], vals["attn_norm.beta"]),
            attn=AttentionWeights(
                query=LinearWeights(vals["attn.query.weight"], vals["attn.query.bias"]),
                key=LinearWeights(vals["attn.key.weight"], vals["attn.key.bias"]),
                value=LinearWeights(vals["attn.value.weight"], vals["attn.value.bias"]),
                out=LinearWeights(vals["attn.out.weight"], vals["attn.out.bias"]),
            ),
            ffn_norm=LayerNormParams(vals["ffn_norm.gamma"], vals["ffn_norm.beta"]),
            ffn=FeedForwardWeights(
                expand=LinearWeights(vals["ffn.expand.weight"], vals["ffn.expand.bias"]),
                project=LinearWeights(vals["ffn.project.weight"], vals["ffn.project.bias"]),
            ),
            heads=config.heads,
            norm_eps=config.norm_eps,
        )

    blocks = []
    for prefix, kind, _ in _block_prefixes(config):
        if kind != "stgm":
            blocks.append(layer_from(prefix))
            continue
        layer1 = layer_from(prefix + "layer1.")
        layer2 = layer_from(prefix + "layer2.")
        centers = take(prefix + "global_centers")
        pooling = None
        if config.pooling == "intra_inter":
            vals = {}
            for suffix in ("intra_kernel", "intra_norm.gamma", "intra_norm.beta",
                           "intra_point.weight", "intra_point.bias", "inter_kernel",
                           "inter_norm.gamma", "inter_norm.beta", "inter_point.weight",
                           "inter_point.bias"):
                vals[suffix] = take(prefix + "pooling." + suffix)
            if not missing:
                pooling = PoolingWeights(
                    intra_kernel=vals["intra_kernel"],
                    intra_norm=LayerNormParams(vals["intra_norm.gamma"],
                                               vals["intra_norm.beta"]),
                    intra_point=LinearWeights(vals["intra_point.weight"],
                                              vals["intra_point.bias"]),
                    inter_kernel=vals["inter_kernel"],
                    inter_norm=LayerNormParams(vals["inter_norm.gamma"],
                                               vals["inter_norm.beta"]),
                    inter_point=LinearWeights(vals["inter_point.weight"],
                                              vals["inter_point.bias"]),
                )
        if not missing:
            blocks.append(GenerationWeights(layer1, layer2, centers, pooling))

    pe_w = take("patch_embed.weight")
    pe_b = take("patch_embed.bias")
    pos = tensors.get("pos_embed") if config.variant == "global" else None
    if config.variant == "global" and "pos_embed" not in tensors:
        missing.append("pos_embed")
    head_w = take("head.weight")
    head_b = take("head.bias")
    if missing:
        raise ConfigError("weight tensors missing: " + ", ".join(sorted(set(missing))))
    return ModelWeights(
        patch_embed=LinearWeights(pe_w, pe_b),
        pos_embed=pos,
        blocks=blocks,
        head=LinearWeights(head_w, head_b),
    )


def _make_layer_template() -> TransformerLayerWeights:
    from .attention import AttentionWeights, FeedForwardWeights
    from .ops import LayerNormParams

    z1 = np.zeros(1)
    lin = LinearWeights(np.zeros((1, 1)), z1)
    return TransformerLayerWeights(
        attn_norm=LayerNormParams(z1, z1),
        attn=AttentionWeights(lin, lin, lin, lin),
        ffn_norm=LayerNormParams(z1, z1),
        ffn=FeedForwardWeights(lin, lin),
        heads=1,
    )


_LAYER_TEMPLATE = _make_layer_template()


def save_model_weights(dirpath, weights: ModelWeights, config: ModelConfig) -> None:
    from .storage import save_weight_dir

    save_weight_dir(dirpath, flatten_weights(weights, config),
                    meta={"kind": "model-weights", "config": config.to_dict()})


def load_model_weights(dirpath, config: Optional[ModelConfig] = None):
    """Load a weight directory; returns (weights, config) using stored config if none given."""
    from .storage import load_weight_dir

    tensors, meta = load_weight_dir(dirpath)
    if config is None:
        if "config" not in meta:
            raise ConfigError(f"weight directory {dirpath} stores no config; pass one")
        config = ModelConfig.from_dict(meta["config"])
    return unflatten_weights(tensors, config), config
