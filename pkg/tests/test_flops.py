"""Analytical cost model against instrumented kernels and known totals."""

import numpy as np
import pytest

from stvit.attention import cross_attention_layer, init_transformer_layer, transformer_layer
from stvit.errors import ConfigError
from stvit.flops import (
    SWIN_STACKS,
    attention_macs,
    ffn_macs,
    flops_counted,
    flops_counted_base,
    flops_global_base,
    flops_stack_base,
    flops_stack_stvit,
    flops_stvit_global,
    pooling_macs,
    self_attention_layer_macs,
)
from stvit.generation import (
    init_centers_adaptive,
    init_centers_intra_inter,
    init_pooling_weights,
    max_window_tokens,
)
from stvit.model import ModelConfig
from stvit.ops import count_macs
from stvit.presets import model_preset, stack_preset


def test_self_attention_layer_macs_matches_instrumented_layer():
    rng = np.random.default_rng(0)
    n, c = 11, 24
    w = init_transformer_layer(rng, c, 4)
    x = rng.standard_normal((n, c))
    with count_macs() as counter:
        transformer_layer(x, w)
    assert counter.total == self_attention_layer_macs(n, c)


def test_attention_macs_matches_instrumented_cross_layer():
    rng = np.random.default_rng(1)
    nq, nk, c = 5, 17, 24
    w = init_transformer_layer(rng, c, 4)
    q = rng.standard_normal((nq, c))
    k = rng.standard_normal((nk, c))
    with count_macs() as counter:
        cross_attention_layer(q, k, w)
    assert counter.total == attention_macs(nq, nk, c) + ffn_macs(nq, c)


def test_pooling_macs_matches_instrumented_pooling():
    rng = np.random.default_rng(2)
    h, w, c, side = 7, 5, 12, 2
    net = init_pooling_weights(rng, c, max_window_tokens(h, w, side))
    x = rng.standard_normal((h, w, c))
    with count_macs() as counter:
        init_centers_intra_inter(x, side, net)
    assert counter.total == pooling_macs(h, w, side, c)
    with count_macs() as counter:
        init_centers_adaptive(x, side)
    assert counter.total == 0


def test_plain_stack_total_reduces_to_closed_form():
    config = ModelConfig(variant="global", depth=9, channels=128, heads=4,
                         image_grid=(10, 10), patch=8, classes=100, stgm_position=None)
    report = flops_counted(config)
    rows = dict(report.layers)
    body = report.counted - rows["embed"] - rows["head"]
    assert body == flops_global_base(100, 128, 9)
    assert report.closed_form == flops_global_base(100, 128, 9)
    assert report.reduction_vs_base == 0.0


def test_closed_form_values_are_pinned():
    assert flops_global_base(196, 384, 12) == 4515840000
    assert flops_stvit_global(196, 16, 384) == 1806188544
    with pytest.raises(ConfigError):
        flops_global_base(0, 384, 12)
    with pytest.raises(ConfigError):
        flops_stvit_global(196, 16, 0)


def test_canonical_global_config_reports_closed_form():
    report = flops_counted(model_preset("deit-s-16"))
    assert report.closed_form == flops_stvit_global(196, 16, 384)
    rows = dict(report.layers)
    body = report.counted - rows["embed"] - rows["head"]
    # The closed form drops embed, head, and pooling, and models the
    # generation stage more coarsely, so it sits a little under the walk.
    gap = body - report.closed_form
    assert 0 < gap < 0.03 * body
    assert flops_counted(model_preset("tiny")).closed_form is None


def test_known_model_totals():
    cases = {
        "deit-t-16": 0.52,
        "deit-s-16": 1.91,
        "deit-b-16": 7.26,
    }
    for name, gflops in cases.items():
        report = flops_counted(model_preset(name))
        assert abs(report.counted / 1e9 - gflops) / gflops < 0.03, name
    base = flops_counted_base(model_preset("deit-s-16"))
    assert abs(base.counted / 1e9 - 4.6) / 4.6 < 0.03
    assert base.reduction_vs_base == 0.0


def test_reduction_tracks_semantic_token_count():
    reductions = [flops_counted(model_preset(f"deit-s-{n}")).reduction_vs_base
                  for n in (16, 36, 64, 100)]
    assert all(r1 > r2 for r1, r2 in zip(reductions, reductions[1:]))
    assert abs(reductions[0] - 0.583) < 0.01


def test_params_estimate_in_published_range():
    params = flops_counted_base(model_preset("deit-s-base")).params_estimate
    assert 21e6 < params < 24e6
    small = flops_counted(model_preset("deit-t-16")).params_estimate
    assert small < params


def test_known_stack_totals():
    spec_t, side_t = stack_preset("swin-t-9")
    report_t = flops_stack_stvit(spec_t, semantic_side=side_t)
    assert abs(report_t.counted / 1e9 - 3.43) / 3.43 < 0.10
    spec_s, side_s = stack_preset("swin-s-9")
    report_s = flops_stack_stvit(spec_s, semantic_side=side_s)
    assert abs(report_s.counted / 1e9 - 6.53) / 6.53 < 0.10
    bases = {"swin-t": 4.5, "swin-s": 8.7, "swin-b": 15.4}
    for name, gflops in bases.items():
        counted = flops_stack_base(SWIN_STACKS[name]).counted
        assert abs(counted / 1e9 - gflops) / gflops < 0.03, name


def test_stack_generation_position_defaults_by_depth():
    shallow = SWIN_STACKS["swin-t"]
    deep = SWIN_STACKS["swin-s"]
    assert flops_stack_stvit(shallow).counted == flops_stack_stvit(shallow, stgm_after=2).counted
    assert flops_stack_stvit(deep).counted == flops_stack_stvit(deep, stgm_after=10).counted
    with pytest.raises(ConfigError, match="too small"):
        flops_stack_stvit(shallow, stgm_after=5)


def test_stack_report_layer_names_cover_all_stages():
    report = flops_stack_stvit(SWIN_STACKS["swin-t"], semantic_side=3)
    names = [n for n, _ in report.layers]
    assert names[0] == "embed" and names[-1] == "head"
    assert sum(1 for n in names if n.startswith("stage3_")) == 6
    assert "merge3" in names
    assert report.reduction_vs_base > 0.2


def test_report_dict_shape():
    report = flops_counted(model_preset("tiny"))
    payload = report.to_dict()
    assert payload["counted_macs"] == report.counted
    assert payload["counted_gflops"] == report.counted / 1e9
    assert payload["closed_form_macs"] is None
    assert set(payload["uncounted_ops"]) >= {"softmax", "layer_norm", "gelu"}
