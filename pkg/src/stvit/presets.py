"""Named configurations: the published model family plus desk-scale fixtures.

Model presets build a ModelConfig and can run end to end. Stack presets
describe the hierarchical four-stage family, which exists here only for cost
analysis; they map a name to the stack shape and the per-window semantic grid
side (None meaning the unmodified backbone).
"""
from __future__ import annotations

from typing import Optional

from .errors import ConfigError
from .flops import SWIN_STACKS, StackSpec
from .model import ModelConfig

_DEIT = {
    "deit-t": (192, 3),
    "deit-s": (384, 6),
    "deit-b": (768, 12),
}
_TOKEN_SIDES = {16: 4, 36: 6, 64: 8, 100: 10}


def _deit_config(channels: int, heads: int, side: Optional[int]) -> ModelConfig:
    return ModelConfig(
        variant="global", depth=12, channels=channels, heads=heads,
        image_grid=(14, 14), patch=16, classes=1000,
        semantic_side=side if side is not None else 4,
        stgm_position=4 if side is not None else None,
        pooling="intra_inter",
    )


def _build_model_presets() -> dict:
    presets = {}
    for family, (channels, heads) in _DEIT.items():
        presets[f"{family}-base"] = lambda c=channels, h=heads: _deit_config(c, h, None)
        for tokens, side in _TOKEN_SIDES.items():
            presets[f"{family}-{tokens}"] = (
                lambda c=channels, h=heads, s=side: _deit_config(c, h, s)
            )

    presets["tiny"] = lambda: ModelConfig(
        variant="global", depth=6, channels=32, heads=4, image_grid=(8, 8),
        patch=4, classes=10, semantic_side=2, stgm_position=2,
        pooling="intra_inter",
    )
    presets["tiny-base"] = lambda: ModelConfig(
        variant="global", depth=6, channels=32, heads=4, image_grid=(8, 8),
        patch=4, classes=10, semantic_side=2, stgm_position=None,
        pooling="intra_inter",
    )
    presets["tiny-local"] = lambda: ModelConfig(
        variant="local", depth=6, channels=32, heads=4, image_grid=(8, 8),
        patch=4, classes=10, semantic_side=2, stgm_position=2,
        pooling="intra_inter", window=4, key_windows=(6, 8),
    )
    presets["tiny-r"] = lambda: ModelConfig(
        variant="global", depth=18, channels=32, heads=4, image_grid=(8, 8),
        patch=4, classes=10, semantic_side=2, stgm_position=None,
        pooling="intra_inter", dumbbell=[(1, 2, 2, 1)] * 3, recovery_windows=(8, 2),
    )
    presets["stvit-r-s"] = lambda: ModelConfig(
        variant="local", depth=18, channels=384, heads=12, image_grid=(14, 14),
        patch=16, classes=1000, semantic_side=3, stgm_position=None,
        pooling="intra_inter", dumbbell=[(1, 2, 2, 1)] * 3, recovery_windows=(7, 3),
        window=7, key_windows=(10, 14),
        reuse_semantic=True,
    )
    return presets


MODEL_PRESETS = _build_model_presets()

# name -> (stack spec, semantic grid side per window or None for the base stack)
STACK_PRESETS = {}
for _name, _spec in SWIN_STACKS.items():
    STACK_PRESETS[f"{_name}-base"] = (_spec, None)
    for _tokens, _side in ((4, 2), (9, 3), (16, 4)):
        STACK_PRESETS[f"{_name}-{_tokens}"] = (_spec, _side)


def model_preset(name: str) -> ModelConfig:
    """Fresh ModelConfig for a named model preset."""
    if name not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; known: {sorted(MODEL_PRESETS)}")
    cfg = MODEL_PRESETS[name]()
    cfg.validate()
    return cfg


def stack_preset(name: str):
    """(StackSpec, semantic side or None) for a named stack preset."""
    if name not in STACK_PRESETS:
        raise ConfigError(f"unknown stack preset {name!r}; known: {sorted(STACK_PRESETS)}")
    return STACK_PRESETS[name]


def preset_names() -> list:
    return sorted(MODEL_PRESETS) + sorted(STACK_PRESETS)
