"""Command line, end to end: files, schemas, exit codes, determinism."""

import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from stvit.cli import load_schema, main
from stvit.storage import load_tensor, save_tensor


def run_cli(*argv):
    return main([str(a) for a in argv])


def validated(path, schema_name):
    payload = json.loads(Path(path).read_text())
    jsonschema.validate(payload, load_schema(schema_name))
    return payload


@pytest.fixture()
def tiny_weights(tmp_path):
    out = tmp_path / "init"
    assert run_cli("init-weights", "--preset", "tiny", "--seed", 0, "--out", out) == 0
    return out


def test_init_weights_manifest(tiny_weights):
    manifest = validated(tiny_weights / "manifest.json", "manifest")
    assert manifest["command"] == "init-weights"
    assert manifest["config"] == "tiny"
    assert len(manifest["weights_hash"]) == 64
    assert (tiny_weights / "weights" / "manifest.json").is_file()


def test_forward_writes_validated_trace(tiny_weights, tmp_path):
    out = tmp_path / "fwd"
    assert run_cli("forward", "--weights", tiny_weights / "weights",
                   "--seed", 0, "--out", out) == 0
    manifest = validated(out / "manifest.json", "manifest")
    trace = validated(out / "trace.json", "trace")
    assert trace["run_id"] == manifest["run_id"]
    kinds = [layer["kind"] for layer in trace["trace"]["layers"]]
    assert kinds == ["image", "image", "stgm1", "stgm2", "semantic", "semantic"]
    assert "elapsed_ms" not in trace["trace"]["layers"][0]
    logits = load_tensor(out / "logits.stvt")
    assert logits.shape == (10,)
    assert logits.dtype == np.float64


def test_forward_is_deterministic_across_runs(tiny_weights, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run_cli("forward", "--weights", tiny_weights / "weights",
                       "--seed", 7, "--out", out) == 0
        outs.append(out)
    assert (outs[0] / "trace.json").read_bytes() == (outs[1] / "trace.json").read_bytes()
    assert (outs[0] / "logits.stvt").read_bytes() == (outs[1] / "logits.stvt").read_bytes()


def test_forward_accepts_explicit_input_tensor(tiny_weights, tmp_path):
    image = np.random.default_rng(7).standard_normal((32, 32, 3))
    img_path = tmp_path / "image.stvt"
    save_tensor(img_path, image)
    out_a = tmp_path / "from-file"
    out_b = tmp_path / "from-seed"
    assert run_cli("forward", "--weights", tiny_weights / "weights", "--input", img_path,
                   "--seed", 7, "--out", out_a) == 0
    assert run_cli("forward", "--weights", tiny_weights / "weights",
                   "--seed", 7, "--out", out_b) == 0
    assert (out_a / "logits.stvt").read_bytes() == (out_b / "logits.stvt").read_bytes()


def test_forward_export_attention(tiny_weights, tmp_path):
    out = tmp_path / "attn"
    assert run_cli("forward", "--weights", tiny_weights / "weights",
                   "--out", out, "--export-attention", "--timings") == 0
    trace = validated(out / "trace.json", "trace")
    first = trace["trace"]["layers"][0]
    assert "attention" in first and "elapsed_ms" in first
    attn = np.asarray(first["attention"])
    assert attn.shape == (4, 64, 64)
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-9)


def test_forward_without_weights_fails(tmp_path, capsys):
    assert run_cli("forward", "--preset", "tiny", "--out", tmp_path) == 2
    assert "error: " in capsys.readouterr().err
    missing = tmp_path / "nope"
    assert run_cli("forward", "--weights", missing, "--out", tmp_path) == 2
    assert str(missing) in capsys.readouterr().err


def test_preset_and_config_are_exclusive(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert run_cli("init-weights", "--preset", "tiny", "--config", cfg,
                   "--out", tmp_path) == 2
    assert "not both" in capsys.readouterr().err
    assert run_cli("init-weights", "--out", tmp_path) == 2
    assert "required" in capsys.readouterr().err


def test_unknown_preset_and_bad_config_files(tmp_path, capsys):
    assert run_cli("flops", "--preset", "no-such-model", "--out", tmp_path) == 2
    assert "error: " in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run_cli("flops", "--config", broken, "--out", tmp_path) == 2
    bad_value = tmp_path / "bad.json"
    bad_value.write_text(json.dumps({"variant": "global", "depth": 0}))
    assert run_cli("flops", "--config", bad_value, "--out", tmp_path) == 2
    assert "depth" in capsys.readouterr().err


def test_seed_range_is_checked(tmp_path, capsys):
    assert run_cli("flops", "--preset", "tiny", "--seed", 2 ** 64, "--out", tmp_path) == 2
    assert "seed" in capsys.readouterr().err


def test_flops_report_known_total(tmp_path):
    out = tmp_path / "flops"
    assert run_cli("flops", "--preset", "deit-s-16", "--out", out) == 0
    payload = validated(out / "flops.json", "flops")
    manifest = validated(out / "manifest.json", "manifest")
    assert payload["run_id"] == manifest["run_id"]
    gflops = payload["report"]["counted_gflops"]
    assert abs(gflops - 1.91) / 1.91 < 0.03
    assert payload["config"]["semantic_side"] == 4


def test_flops_stack_preset(tmp_path, capsys):
    out = tmp_path / "stack"
    assert run_cli("flops", "--preset", "swin-t-9", "--out", out) == 0
    assert "GFLOPs" in capsys.readouterr().out
    payload = validated(out / "flops.json", "flops")
    assert payload["config"] == "swin-t-9"
    assert abs(payload["report"]["counted_gflops"] - 3.43) / 3.43 < 0.10


def test_flops_sweep_table(tmp_path):
    out = tmp_path / "sweep"
    assert run_cli("flops", "--sweep", "--out", out) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# run_id: ")
    assert lines[1] == "preset,kind,gflops,base_gflops,reduction_pct"
    rows = [line.split(",") for line in lines[2:]]
    assert len(rows) == 27
    by_name = {r[0]: r for r in rows}
    assert abs(float(by_name["deit-s-16"][4]) - 58.3) < 3.0
    assert float(by_name["deit-s-base"][4]) == 0.0
    assert abs(float(by_name["swin-s-9"][2]) - 6.53) / 6.53 < 0.10


def test_recover_outputs_are_valid_and_deterministic(tmp_path):
    args = ("recover", "--k", 4, "--d", 16, "--n", 100, "--seeds", 2, "--seed", 5)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run_cli(*args, "--out", out_a) == 0
    assert run_cli(*args, "--out", out_b) == 0
    payload = validated(out_a / "recovery.json", "recovery")
    assert len(payload["reports"]) == 2
    assert payload["reports"][0]["spec"]["seed"] == 5
    assert payload["reports"][1]["spec"]["seed"] == 6
    assert (out_a / "recovery.json").read_bytes() == (out_b / "recovery.json").read_bytes()
    lines = (out_a / "recovery.csv").read_text().splitlines()
    assert lines[0].startswith("# run_id: ")
    assert len(lines) == 4


def test_recover_rejects_bad_lambda_rule(tmp_path, capsys):
    assert run_cli("recover", "--lambda-rule", "huge", "--seeds", 1, "--out", tmp_path) == 2
    assert "lambda" in capsys.readouterr().err


def test_bench_self_comparison_is_flat(tmp_path):
    out = tmp_path / "bench"
    assert run_cli("bench", "--preset-a", "tiny", "--preset-b", "tiny",
                   "--repeats", 15, "--out", out) == 0
    payload = validated(out / "bench.json", "bench")
    assert payload["threads"] == 1
    assert 0.9 < payload["speedup_a_over_b"] < 1.1
    lines = (out / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("# run_id: ")
    assert len(lines) == 2 + 2 * 15


def test_bench_rejects_too_few_repeats(tmp_path, capsys):
    assert run_cli("bench", "--preset-a", "tiny", "--preset-b", "tiny",
                   "--repeats", 1, "--out", tmp_path) == 2
    assert "repeats" in capsys.readouterr().err


def test_threads_env_fallback(tiny_weights, tmp_path, monkeypatch):
    monkeypatch.setenv("STVIT_THREADS", "1")
    assert run_cli("forward", "--weights", tiny_weights / "weights",
                   "--out", tmp_path / "ok") == 0
    monkeypatch.setenv("STVIT_THREADS", "0")
    assert run_cli("forward", "--weights", tiny_weights / "weights",
                   "--out", tmp_path / "bad") == 2


def test_no_command_prints_help(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().out.lower()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "stvit.cli", "flops", "--preset", "tiny",
         "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "GFLOPs" in proc.stdout
