"""Analytical cost model: per-layer MAC counts plus closed-form totals.

Counts multiply-accumulates for every matmul the forward pass executes, layer
by layer, with row names matching the forward pass's counter scopes so the two
can be compared exactly. Closed-form totals exist for the plain global stack
and for the canonical 12-layer global layout with the generation stage at
layers 5-6; for anything else the walked counter is authoritative. Reported
GFLOPs treat 1 MAC = 1 FLOP, the convention of the usual flop-counting tools.
Softmax, norms, GELU, and residual adds are excluded from totals and listed as
uncounted ops.

The hierarchical (windowed, four-stage) family is modeled analytically here as
well, since the forward model is single-stage: stages halve the token grid and
double channels, the generation stage replaces part of stage 3, and the last
downsampling becomes a plain channel-doubling linear on the semantic tokens.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError
from .generation import max_window_tokens
from .model import ModelConfig, slot_plan

UNCOUNTED_OPS = ("softmax", "layer_norm", "gelu", "residual_add", "mean_pool")


@dataclass
class FlopsReport:
    """Per-layer MAC breakdown with totals and the reduction against a base model."""

    layers: list                     # (name, macs)
    counted: int
    base_counted: int
    reduction_vs_base: float
    params_estimate: int
    closed_form: Optional[int] = None
    uncounted_ops: tuple = UNCOUNTED_OPS

    def to_dict(self) -> dict:
        return {
            "layers": [{"name": n, "macs": m} for n, m in self.layers],
            "counted_macs": self.counted,
            "counted_gflops": self.counted / 1e9,
            "base_macs": self.base_counted,
            "reduction_vs_base": self.reduction_vs_base,
            "params_estimate": self.params_estimate,
            "closed_form_macs": self.closed_form,
            "uncounted_ops": list(self.uncounted_ops),
        }


def attention_macs(n_query: int, n_key: int, channels: int) -> int:
    """Query/out projections, key/value projections, logits and weighted sum."""
    return 2 * n_query * channels * channels + 2 * n_key * channels * channels \
        + 2 * n_query * n_key * channels


def ffn_macs(n: int, channels: int, ratio: int = 4) -> int:
    return 2 * n * channels * ratio * channels


def self_attention_layer_macs(n: int, channels: int, ratio: int = 4) -> int:
    return attention_macs(n, n, channels) + ffn_macs(n, channels, ratio)


def window_layer_macs(n: int, window: int, channels: int, ratio: int = 4) -> int:
    """Per-window self-attention over an n-token map tiled by window*window."""
    per = window * window
    return (n // per) * self_attention_layer_macs(per, channels, ratio)


def pooling_macs(h: int, w: int, side: int, channels: int) -> int:
    """Intra/inter pooling cost on an h x w map with a side x side center grid."""
    area = h * w
    cap = max_window_tokens(h, w, side)
    intra = 9 * area * channels + area * channels + 2 * area * channels
    inter = 9 * side * side * channels + side * side * channels * cap
    return intra + inter


def flops_global_base(n: int, channels: int, depth: int) -> int:
    """Closed form for the plain global stack: depth * (12NC^2 + 2N^2C)."""
    if n < 1 or channels < 1 or depth < 1:
        raise ConfigError("flops_global_base needs positive arguments")
    return depth * (12 * n * channels * channels + 2 * n * n * channels)


def flops_stvit_global(n: int, m: int, channels: int) -> int:
    """Closed form for the 12-layer global layout with generation at layers 5-6."""
    if n < 1 or m < 0 or channels < 1:
        raise ConfigError("flops_stvit_global needs positive N and C")
    c2 = channels * channels
    return (52 * n * c2 + 12 * m * m * channels + 76 * m * c2
            + 8 * n * n * channels + 4 * m * n * channels)


def _transformer_params(channels: int, ratio: int = 4) -> int:
    qkvo = 4 * (channels * channels + channels)
    norms = 4 * channels
    ffn = channels * ratio * channels + ratio * channels + ratio * channels * channels + channels
    return qkvo + norms + ffn


def _generation_params(channels: int, n_semantic: int, cap: Optional[int], ratio: int = 4) -> int:
    total = 2 * _transformer_params(channels, ratio) + n_semantic * channels
    if cap is not None:
        total += 2 * 9 * channels + 4 * channels + channels + 1 + channels * cap + cap
    return total


def params_estimate(config: ModelConfig) -> int:
    """Rough parameter count for the configured model."""
    c = config.channels
    total = config.patch * config.patch * 3 * c + c
    if config.variant == "global":
        total += config.image_tokens() * c
    cap = None
    if config.pooling == "intra_inter":
        if config.variant == "local":
            cap = max_window_tokens(config.window, config.window, config.semantic_side)
        else:
            cap = max_window_tokens(*config.image_grid, config.semantic_side)
    per = config.semantic_side * config.semantic_side
    seen = -1
    for kind, block in slot_plan(config):
        if block == seen:
            continue
        seen = block
        if kind == "stgm1":
            total += _generation_params(c, per, cap, config.ffn_ratio)
        else:
            total += _transformer_params(c, config.ffn_ratio)
    total += c * config.classes + config.classes
    return total


def _slot_macs(config: ModelConfig, kind: str, stgm_seen: int) -> int:
    """MACs for one depth slot, mirroring the forward pass exactly."""
    c = config.channels
    ratio = config.ffn_ratio
    h, w = config.image_grid
    n_i = config.image_tokens()
    side = config.semantic_side
    per = side * side
    local = config.variant == "local"
    n_windows = (h // config.window) * (w // config.window) if local else 1
    m = config.semantic_tokens()

    if kind == "image":
        if local:
            return n_windows * self_attention_layer_macs(
                config.window * config.window, c, ratio)
        return self_attention_layer_macs(n_i, c, ratio)

    if kind == "stgm1":
        pooled = 0
        if config.pooling == "intra_inter" and not (config.reuse_semantic and stgm_seen > 0):
            if local:
                pooled = n_windows * pooling_macs(config.window, config.window, side, c)
            else:
                pooled = pooling_macs(h, w, side, c)
        if local:
            k1 = min(config.key_windows[0], h) * min(config.key_windows[0], w)
            attn = n_windows * (attention_macs(per, k1, c) + ffn_macs(per, c, ratio))
        else:
            attn = attention_macs(per, n_i, c) + ffn_macs(per, c, ratio)
        return pooled + attn

    if kind == "stgm2":
        if local:
            k2 = per + min(config.key_windows[1], h) * min(config.key_windows[1], w)
            return n_windows * (attention_macs(per, k2, c) + ffn_macs(per, c, ratio))
        return attention_macs(per, per + n_i, c) + ffn_macs(per, c, ratio)

    if kind == "semantic":
        return self_attention_layer_macs(m, c, ratio)

    if kind == "semantic_local":
        return n_windows * self_attention_layer_macs(per, c, ratio)

    if kind == "cross_window":
        span = config.span_multiplier * side
        g_h = (h // config.window) * side
        g_w = (w // config.window) * side
        if g_h <= span and g_w <= span:
            return self_attention_layer_macs(m, c, ratio)
        total = 0
        for r0 in range(0, g_h, span):
            for c0 in range(0, g_w, span):
                tile = min(span, g_h - r0) * min(span, g_w - c0)
                total += self_attention_layer_macs(tile, c, ratio)
        return total

    if kind == "recovery":
        w_r, ws_r = config.recovery_windows
        units = (h // w_r) * (w // w_r)
        return units * (attention_macs(w_r * w_r, ws_r * ws_r, c) + ffn_macs(w_r * w_r, c, ratio))

    raise ConfigError(f"unknown slot kind {kind!r}")


def flops_counted(config: ModelConfig) -> FlopsReport:
    """Walk the config layer by layer, counting MACs as the forward pass executes them."""
    config.validate()
    c = config.channels
    n_i = config.image_tokens()
    rows = [("embed", n_i * config.patch * config.patch * 3 * c)]
    stgm_seen = 0
    for i, (kind, _) in enumerate(slot_plan(config)):
        rows.append((f"layer_{i:02d}", _slot_macs(config, kind, stgm_seen)))
        if kind == "stgm2":
            stgm_seen += 1
    rows.append(("head", c * config.classes))
    counted = sum(m for _, m in rows)

    base = flops_counted_base(config)
    closed = None
    if config.variant == "global" and config.dumbbell is None:
        if config.stgm_position is None:
            closed = flops_global_base(n_i, c, config.depth)
        elif config.depth == 12 and config.stgm_position == 4:
            closed = flops_stvit_global(n_i, config.semantic_tokens(), c)
    return FlopsReport(
        layers=rows,
        counted=counted,
        base_counted=base.counted,
        reduction_vs_base=1.0 - counted / base.counted,
        params_estimate=params_estimate(config),
        closed_form=closed,
    )


def flops_counted_base(config: ModelConfig) -> FlopsReport:
    """Cost of the plain backbone: same depth, every layer on image tokens."""
    config.validate()
    c = config.channels
    n_i = config.image_tokens()
    rows = [("embed", n_i * config.patch * config.patch * 3 * c)]
    per_layer = _slot_macs(config, "image", 0)
    for i in range(config.depth):
        rows.append((f"layer_{i:02d}", per_layer))
    rows.append(("head", c * config.classes))
    counted = sum(m for _, m in rows)
    closed = None
    if config.variant == "global":
        closed = flops_global_base(n_i, c, config.depth)
    base_params = params_estimate(config)
    return FlopsReport(
        layers=rows,
        counted=counted,
        base_counted=counted,
        reduction_vs_base=0.0,
        params_estimate=base_params,
        closed_form=closed,
    )


# Hierarchical four-stage stacks, modeled analytically.

@dataclass(frozen=True)
class StackSpec:
    """Shape of a four-stage windowed backbone."""

    depths: tuple = (2, 2, 6, 2)
    channels: tuple = (96, 192, 384, 768)
    grid: int = 56                   # token grid side after patch embed
    patch: int = 4
    window: int = 7
    classes: int = 1000
    ffn_ratio: int = 4

    def stage_grid(self, stage: int) -> int:
        return self.grid // (2 ** stage)


SWIN_STACKS = {
    "swin-t": StackSpec(depths=(2, 2, 6, 2), channels=(96, 192, 384, 768)),
    "swin-s": StackSpec(depths=(2, 2, 18, 2), channels=(96, 192, 384, 768)),
    "swin-b": StackSpec(depths=(2, 2, 18, 2), channels=(128, 256, 512, 1024)),
}


def _stage_layer_macs(spec: StackSpec, stage: int) -> int:
    side = spec.stage_grid(stage)
    c = spec.channels[stage]
    n = side * side
    w_eff = min(spec.window, side)
    per = w_eff * w_eff
    return (n // per) * self_attention_layer_macs(per, c, spec.ffn_ratio)


def flops_stack_base(spec: StackSpec) -> FlopsReport:
    """Plain four-stage windowed backbone."""
    rows = [("embed", spec.grid * spec.grid * spec.patch * spec.patch * 3 * spec.channels[0])]
    for stage in range(4):
        for j in range(spec.depths[stage]):
            rows.append((f"stage{stage + 1}_layer_{j:02d}", _stage_layer_macs(spec, stage)))
        if stage < 3:
            side = spec.stage_grid(stage)
            c = spec.channels[stage]
            rows.append((f"merge{stage + 1}", 2 * side * side * c * c))
    rows.append(("head", spec.channels[3] * spec.classes))
    counted = sum(m for _, m in rows)
    params = spec.patch * spec.patch * 3 * spec.channels[0] + spec.channels[0]
    for stage in range(4):
        params += spec.depths[stage] * _transformer_params(spec.channels[stage], spec.ffn_ratio)
        if stage < 3:
            params += 4 * spec.channels[stage] * 2 * spec.channels[stage]
    params += spec.channels[3] * spec.classes + spec.classes
    return FlopsReport(rows, counted, counted, 0.0, params)


def flops_stack_stvit(
    spec: StackSpec,
    semantic_side: int = 3,
    key_windows: tuple = (10, 14),
    stgm_after: Optional[int] = None,
    pooling: str = "intra_inter",
) -> FlopsReport:
    """Four-stage stack with the generation stage inserted into stage 3.

    stgm_after gives the number of untouched stage-3 layers before the two
    generation layers; the remaining stage-3 layers run on semantic tokens,
    alternating within-window and cross-window attention. The stage-3
    downsampling is replaced by a channel-doubling linear and stage 4 runs
    globally on the semantic tokens.
    """
    if stgm_after is None:
        stgm_after = 2 if spec.depths[2] <= 6 else 10
    if stgm_after + 2 > spec.depths[2]:
        raise ConfigError(f"stage 3 depth {spec.depths[2]} too small for stgm_after={stgm_after}")
    side3 = spec.stage_grid(2)
    c3 = spec.channels[2]
    n3 = side3 * side3
    n_windows = (side3 // spec.window) ** 2
    per = semantic_side * semantic_side
    m_total = per * n_windows
    ratio = spec.ffn_ratio

    rows = [("embed", spec.grid * spec.grid * spec.patch * spec.patch * 3 * spec.channels[0])]
    for stage in range(2):
        for j in range(spec.depths[stage]):
            rows.append((f"stage{stage + 1}_layer_{j:02d}", _stage_layer_macs(spec, stage)))
        side = spec.stage_grid(stage)
        c = spec.channels[stage]
        rows.append((f"merge{stage + 1}", 2 * side * side * c * c))

    for j in range(stgm_after):
        rows.append((f"stage3_layer_{j:02d}", _stage_layer_macs(spec, 2)))

    k1 = min(key_windows[0], side3) ** 2
    stgm1 = n_windows * (attention_macs(per, k1, c3) + ffn_macs(per, c3, ratio))
    if pooling == "intra_inter":
        stgm1 += n_windows * pooling_macs(spec.window, spec.window, semantic_side, c3)
    rows.append((f"stage3_layer_{stgm_after:02d}", stgm1))
    k2 = per + min(key_windows[1], side3) ** 2
    stgm2 = n_windows * (attention_macs(per, k2, c3) + ffn_macs(per, c3, ratio))
    rows.append((f"stage3_layer_{stgm_after + 1:02d}", stgm2))

    for k in range(spec.depths[2] - stgm_after - 2):
        j = stgm_after + 2 + k
        if k % 2 == 0:
            macs = n_windows * self_attention_layer_macs(per, c3, ratio)
        else:
            macs = self_attention_layer_macs(m_total, c3, ratio)
        rows.append((f"stage3_layer_{j:02d}", macs))
    rows.append(("merge3", 2 * m_total * c3 * c3))

    c4 = spec.channels[3]
    for j in range(spec.depths[3]):
        rows.append((f"stage4_layer_{j:02d}", self_attention_layer_macs(m_total, c4, ratio)))
    rows.append(("head", c4 * spec.classes))

    counted = sum(m for _, m in rows)
    base = flops_stack_base(spec)
    cap = max_window_tokens(spec.window, spec.window, semantic_side)
    params = base.params_estimate + _generation_params(c3, per, cap, ratio) \
        - 2 * _transformer_params(c3, ratio)
    return FlopsReport(
        layers=rows,
        counted=counted,
        base_counted=base.counted,
        reduction_vs_base=1.0 - counted / base.counted,
        params_estimate=params,
    )
