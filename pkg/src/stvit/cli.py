"""Command line driving forward runs, cost reports, benchmarks, and recovery runs.

Every command writes its files under --out next to a manifest recording the
command, config, seed, weights hash, output paths, and wall-clock timings.
Reports embed the manifest's run_id so each file traces back to exactly one
invocation. Outputs are deterministic for a fixed --seed; only measured
timings (bench results, manifest clocks) vary between runs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .cluster_lab import MixtureSpec, run_experiment
from .errors import ConfigError, StvitError
from .flops import flops_counted, flops_stack_base, flops_stack_stvit
from .model import (
    ModelConfig,
    forward,
    init_model_weights,
    load_model_weights,
    save_model_weights,
)
from .presets import MODEL_PRESETS, STACK_PRESETS, model_preset, stack_preset
from .storage import load_tensor, save_tensor, weight_dir_hash

SCHEMA_NAMES = ("manifest", "trace", "flops", "bench", "recovery")


def load_schema(name: str) -> dict:
    """One of the JSON schemas shipped with the package, by short name."""
    if name not in SCHEMA_NAMES:
        raise ConfigError(f"unknown schema {name!r}; known: {list(SCHEMA_NAMES)}")
    path = resources.files("stvit") / "schemas" / f"{name}.schema.json"
    return json.loads(path.read_text())


def make_run_id(command: str, config_repr: str, seed: int, weights_hash: Optional[str]) -> str:
    """Deterministic 16-hex id tying reports to the manifest of one invocation."""
    text = "|".join([command, config_repr, str(seed), weights_hash or "-"])
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir: Path, run_id: str, command: str, config_ref: Optional[str],
                   seed: int, weights_hash: Optional[str], outputs: list,
                   timings: dict) -> Path:
    path = out_dir / "manifest.json"
    write_json(path, {
        "run_id": run_id,
        "command": command,
        "config": config_ref,
        "seed": seed,
        "weights_hash": weights_hash,
        "outputs": [str(p) for p in outputs],
        "timings": timings,
    })
    return path


def _check_seed(seed: int) -> int:
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def _thread_limit(args, default: Optional[int] = None) -> Optional[int]:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("STVIT_THREADS"):
        n = int(os.environ["STVIT_THREADS"])
    else:
        n = default
    if n is not None and n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    return n


def _canonical(config: ModelConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)


def _config_from_file(path_str: str) -> ModelConfig:
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return ModelConfig.from_dict(json.loads(path.read_text()))


def _resolve_model_config(preset: Optional[str], config: Optional[str]):
    """(ModelConfig, reference string) from --preset or --config."""
    if preset and config:
        raise ConfigError("give either --preset or --config, not both")
    if preset:
        return model_preset(preset), preset
    if config:
        return _config_from_file(config), config
    raise ConfigError("a model config is required: pass --preset or --config")


def _synth_image(config: ModelConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    h = config.image_grid[0] * config.patch
    w = config.image_grid[1] * config.patch
    return rng.standard_normal((h, w, 3))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_init_weights(args) -> int:
    seed = _check_seed(args.seed)
    config, config_ref = _resolve_model_config(args.preset, args.config)
    out = _out_dir(args)
    weights_dir = out / "weights"
    started = time.perf_counter()
    weights = init_model_weights(np.random.default_rng(seed), config)
    save_model_weights(weights_dir, weights, config)
    digest = weight_dir_hash(weights_dir)
    total = time.perf_counter() - started
    run_id = make_run_id("init-weights", _canonical(config), seed, digest)
    write_manifest(out, run_id, "init-weights", config_ref, seed, digest,
                   [weights_dir], {"total_s": total})
    print(f"run {run_id}: wrote {weights_dir} (hash {digest[:12]})")
    return 0


def cmd_forward(args) -> int:
    seed = _check_seed(args.seed)
    if not args.weights:
        raise ConfigError("forward needs --weights DIR (try init-weights first)")
    weights_dir = Path(args.weights)
    if not (weights_dir / "manifest.json").is_file():
        raise ConfigError(f"weights directory not found or incomplete: {weights_dir}")

    config = None
    config_ref = str(weights_dir)
    if args.preset or args.config:
        config, config_ref = _resolve_model_config(args.preset, args.config)
    started = time.perf_counter()
    weights, config = load_model_weights(weights_dir, config)
    load_s = time.perf_counter() - started

    image = load_tensor(args.input) if args.input else _synth_image(config, seed)
    digest = weight_dir_hash(weights_dir)
    run_id = make_run_id("forward", _canonical(config), seed, digest)

    limit = _thread_limit(args)
    started = time.perf_counter()
    if limit:
        with threadpool_limits(limits=limit):
            logits, trace = forward(weights, config, image,
                                    export_attention=args.export_attention)
    else:
        logits, trace = forward(weights, config, image,
                                export_attention=args.export_attention)
    forward_s = time.perf_counter() - started

    out = _out_dir(args)
    trace_path = out / "trace.json"
    logits_path = out / "logits.stvt"
    write_json(trace_path, {
        "run_id": run_id,
        "config": config.to_dict(),
        "trace": trace.to_dict(include_timings=args.timings,
                               include_attention=args.export_attention),
    })
    save_tensor(logits_path, logits)
    write_manifest(out, run_id, "forward", config_ref, seed, digest,
                   [trace_path, logits_path],
                   {"load_s": load_s, "forward_s": forward_s})
    schedule = " ".join(f"{kind}:{n}" for kind, n in trace.token_schedule())
    print(f"run {run_id}: {schedule}")
    print(f"wrote {trace_path} and {logits_path}")
    return 0


def _sweep_rows(seed: int) -> list:
    rows = []
    for family in ("deit-t", "deit-s", "deit-b"):
        for suffix in ("base", "16", "36", "64", "100"):
            name = f"{family}-{suffix}"
            report = flops_counted(model_preset(name))
            rows.append((name, "model", report.counted / 1e9,
                         report.base_counted / 1e9, 100.0 * report.reduction_vs_base))
    for family in ("swin-t", "swin-s", "swin-b"):
        for suffix in ("base", "4", "9", "16"):
            name = f"{family}-{suffix}"
            spec, side = stack_preset(name)
            report = flops_stack_stvit(spec, semantic_side=side) if side \
                else flops_stack_base(spec)
            rows.append((name, "stack", report.counted / 1e9,
                         report.base_counted / 1e9, 100.0 * report.reduction_vs_base))
    return rows


def cmd_flops(args) -> int:
    seed = _check_seed(args.seed)
    out = _out_dir(args)
    started = time.perf_counter()

    if args.sweep:
        run_id = make_run_id("flops", "sweep", seed, None)
        rows = _sweep_rows(seed)
        sweep_path = out / "sweep.csv"
        with open(sweep_path, "w", newline="") as fh:
            fh.write(f"# run_id: {run_id}\n")
            writer = csv.writer(fh)
            writer.writerow(["preset", "kind", "gflops", "base_gflops", "reduction_pct"])
            for name, kind, gflops, base, red in rows:
                writer.writerow([name, kind, f"{gflops:.4f}", f"{base:.4f}", f"{red:.1f}"])
        write_manifest(out, run_id, "flops", "sweep", seed, None,
                       [sweep_path], {"total_s": time.perf_counter() - started})
        print(f"run {run_id}: wrote {sweep_path} ({len(rows)} presets)")
        return 0

    if args.preset and args.preset in STACK_PRESETS:
        spec, side = stack_preset(args.preset)
        report = flops_stack_stvit(spec, semantic_side=side) if side \
            else flops_stack_base(spec)
        config_ref = args.preset
        config_payload: object = args.preset
    else:
        config, config_ref = _resolve_model_config(args.preset, args.config)
        report = flops_counted(config)
        config_payload = config.to_dict()

    run_id = make_run_id("flops", config_ref, seed, None)
    flops_path = out / "flops.json"
    write_json(flops_path, {"run_id": run_id, "config": config_payload,
                            "report": report.to_dict()})
    write_manifest(out, run_id, "flops", config_ref, seed, None,
                   [flops_path], {"total_s": time.perf_counter() - started})
    print(f"run {run_id}: {report.counted / 1e9:.3f} GFLOPs "
          f"({-100.0 * report.reduction_vs_base:+.1f}% vs base)")
    print(f"wrote {flops_path}")
    return 0


def _bench_side(config: ModelConfig, seed: int, repeats: int, threads: int) -> list:
    weights = init_model_weights(np.random.default_rng(seed), config)
    image = _synth_image(config, seed)
    times = []
    with threadpool_limits(limits=threads):
        forward(weights, config, image)
        for _ in range(repeats):
            started = time.perf_counter()
            forward(weights, config, image)
            times.append((time.perf_counter() - started) * 1000.0)
    return times


def cmd_bench(args) -> int:
    seed = _check_seed(args.seed)
    if args.repeats < 3:
        raise ConfigError(f"repeats must be >= 3, got {args.repeats}")
    threads = _thread_limit(args, default=1) or 1
    config_a, label_a = _resolve_model_config(args.preset_a, args.config_a)
    config_b, label_b = _resolve_model_config(args.preset_b, args.config_b)

    run_id = make_run_id(
        "bench", _canonical(config_a) + "|" + _canonical(config_b), seed, None)
    sides = []
    for label, config in ((label_a, config_a), (label_b, config_b)):
        times = _bench_side(config, seed, args.repeats, threads)
        sides.append({"label": label, "median_ms": statistics.median(times),
                      "times_ms": times})
    speedup = sides[1]["median_ms"] / sides[0]["median_ms"]

    out = _out_dir(args)
    csv_path = out / "bench.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# run_id: {run_id}\n")
        writer = csv.writer(fh)
        writer.writerow(["label", "repeat", "ms"])
        for side in sides:
            for r, ms in enumerate(side["times_ms"]):
                writer.writerow([side["label"], r, f"{ms:.4f}"])
    json_path = out / "bench.json"
    write_json(json_path, {
        "run_id": run_id,
        "repeats": args.repeats,
        "threads": threads,
        "config_a": sides[0],
        "config_b": sides[1],
        "speedup_a_over_b": speedup,
    })
    write_manifest(out, run_id, "bench", f"{label_a}|{label_b}", seed, None,
                   [csv_path, json_path],
                   {"median_a_ms": sides[0]["median_ms"],
                    "median_b_ms": sides[1]["median_ms"]})
    print(f"run {run_id}: {label_a} {sides[0]['median_ms']:.2f} ms vs "
          f"{label_b} {sides[1]['median_ms']:.2f} ms; a is {speedup:.2f}x faster")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_recover(args) -> int:
    seed = _check_seed(args.seed)
    if args.seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {args.seeds}")
    lambda_rule = args.lambda_rule
    if lambda_rule != "theorem":
        try:
            lambda_rule = float(lambda_rule)
        except ValueError:
            raise ConfigError(
                f"lambda rule must be 'theorem' or a number, got {args.lambda_rule!r}")

    flags = {"k": args.k, "d": args.d, "n": args.n, "sigma": args.sigma,
             "gamma_max": args.gamma_max, "seeds": args.seeds, "init": args.init,
             "lambda_rule": args.lambda_rule, "updates": args.updates,
             "init_noise": args.init_noise}
    run_id = make_run_id("recover", json.dumps(flags, sort_keys=True), seed, None)

    limit = _thread_limit(args)
    started = time.perf_counter()
    reports = []
    for offset in range(args.seeds):
        spec = MixtureSpec(k=args.k, d=args.d, n=args.n, sigma=args.sigma,
                           gamma_max=args.gamma_max, seed=seed + offset)
        if limit:
            with threadpool_limits(limits=limit):
                report = run_experiment(spec, init=args.init, lambda_rule=lambda_rule,
                                        updates=args.updates, init_noise=args.init_noise)
        else:
            report = run_experiment(spec, init=args.init, lambda_rule=lambda_rule,
                                    updates=args.updates, init_noise=args.init_noise)
        reports.append(report)
    total = time.perf_counter() - started

    out = _out_dir(args)
    json_path = out / "recovery.json"
    write_json(json_path, {"run_id": run_id,
                           "reports": [r.to_dict() for r in reports]})
    csv_path = out / "recovery.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# run_id: {run_id}\n")
        writer = csv.writer(fh)
        writer.writerow(["seed", "feasible", "delta", "lambda_used",
                         "min_cosine_before", "min_cosine_after", "mean_cosine_after"])
        for r in reports:
            writer.writerow([
                r.spec.seed, int(r.feasible), f"{r.delta:.6f}", f"{r.lambda_used:.6f}",
                f"{min(r.cosine_before):.6f}", f"{r.min_cosine_after:.6f}",
                f"{r.mean_cosine_after:.6f}",
            ])
    write_manifest(out, run_id, "recover", json.dumps(flags, sort_keys=True), seed,
                   None, [json_path, csv_path], {"total_s": total})

    feasible = [r for r in reports if r.feasible]
    improved = sum(1 for r in feasible
                   if r.min_cosine_after > min(r.cosine_before))
    worst = min((r.min_cosine_after for r in feasible), default=float("nan"))
    print(f"run {run_id}: {len(feasible)}/{len(reports)} feasible, "
          f"{improved} improved, worst min cosine {worst:.4f}")
    print(f"wrote {json_path} and {csv_path}")
    return 0


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stvit", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="RNG seed, unsigned 64-bit (default: %(default)s).")
    common.add_argument("--out", default=".",
                        help="Output directory (default: current directory).")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap; env STVIT_THREADS is the fallback.")

    picker = argparse.ArgumentParser(add_help=False)
    picker.add_argument("--preset", help=f"Named config, one of: {', '.join(sorted(MODEL_PRESETS))}.")
    picker.add_argument("--config", help="Path to a model config JSON file.")

    p = sub.add_parser("forward", parents=[common, picker],
                       help="Run one forward pass; write the trace and logits.")
    p.add_argument("--weights", help="Weight directory written by init-weights.")
    p.add_argument("--input", help="Image tensor file [h,w,3]; synthesized from --seed when omitted.")
    p.add_argument("--export-attention", action="store_true",
                   help="Embed per-layer attention tensors in the trace.")
    p.add_argument("--timings", action="store_true",
                   help="Embed per-layer wall-clock times in the trace.")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("flops", parents=[common, picker],
                       help="Analytical cost report for one config or the preset sweep.")
    p.add_argument("--sweep", action="store_true",
                   help="Write the full preset table as CSV instead of one report.")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", parents=[common],
                       help="Median forward wall-clock for two configs, single-threaded.")
    p.add_argument("--preset-a", help="First config preset name.")
    p.add_argument("--config-a", help="First config JSON path.")
    p.add_argument("--preset-b", help="Second config preset name.")
    p.add_argument("--config-b", help="Second config JSON path.")
    p.add_argument("--repeats", type=int, default=5,
                   help="Timed repeats per config, at least 3 (default: %(default)s).")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("recover", parents=[common],
                       help="Cluster-center recovery runs over a seed range.")
    p.add_argument("--k", type=int, default=8, help="Clusters (default: %(default)s).")
    p.add_argument("--d", type=int, default=64, help="Dimensions (default: %(default)s).")
    p.add_argument("--n", type=int, default=2000,
                   help="Points per cluster (default: %(default)s).")
    p.add_argument("--sigma", type=float, default=0.5,
                   help="Noise level (default: %(default)s).")
    p.add_argument("--gamma-max", type=float, default=0.1,
                   help="Max center correlation (default: %(default)s).")
    p.add_argument("--seeds", type=int, default=20,
                   help="Consecutive seeds starting at --seed (default: %(default)s).")
    p.add_argument("--init", choices=("true_perturbed", "random"),
                   default="true_perturbed", help="Query initialization.")
    p.add_argument("--lambda-rule", default="theorem",
                   help="'theorem' or a fixed positive number (default: %(default)s).")
    p.add_argument("--updates", type=int, default=1,
                   help="Attention updates to apply (default: %(default)s).")
    p.add_argument("--init-noise", type=float, default=0.5,
                   help="Perturbation scale for true_perturbed init (default: %(default)s).")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("init-weights", parents=[common, picker],
                       help="Write a seeded random weight directory for a config.")
    p.set_defaults(func=cmd_init_weights)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (StvitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
