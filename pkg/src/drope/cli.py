"""Command-line harness: ``drope-bench verify | profile | rollout``.

Runs are deterministic for a fixed config file, flag set, and seed; JSON
reports carry a ``generated_at`` header that consumers should drop before
comparing. Exit codes: 0 all checks passed, 1 a numerical property was
violated, 2 usage, config, or I/O error.

``DROPE_ATTN_THREADS`` caps the worker threads used for the verification
checks and profiler sweeps (default 1).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attention import Variant
from .errors import ConfigurationError, DropeError, VerificationError
from .kinematics import ZERO_ACTION, min_ade
from .pipeline import (
    ConstantActionPolicy,
    PipelineConfig,
    PipelinePolicy,
    PipelineWeights,
    rollout,
    write_trajectory_csv,
)
from .profiling import (
    SweepPoint,
    WIDTH_CONVENTION,
    check_sweep_trends,
    sweep,
    write_sweep_csv,
)
from .scene import load_scene, make_constant_velocity_scene, make_scene
from .verification import (
    FAULT_ROPE_FREQS_IN_FANGLE,
    VerificationConfig,
    run_verification,
)

ENV_THREADS = "DROPE_ATTN_THREADS"

USAGE_EXIT = 2
VIOLATION_EXIT = 1

DEFAULT_PROFILE_GRID = {
    "n_tokens": [16, 32, 64],
    "n_heads": [4],
    "d_k": [32, 64, 128],
    "d_v": [64],
}


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _max_workers() -> int:
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{ENV_THREADS} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ConfigurationError(f"{ENV_THREADS} must be >= 1, got {workers}")
    return workers


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigurationError("the config file must hold a JSON object")
    return config


def _out_dir(args, command: str) -> Path:
    out = Path(args.out if args.out is not None else f"{command}-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_verify(args) -> int:
    config = _load_config(args.config)
    trials = args.trials if args.trials is not None else config.get("trials", 1000)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    fault = args.fault_inject or config.get("fault_inject")
    if trials < 1:
        raise ConfigurationError(f"--trials must be positive, got {trials}")
    cfg = VerificationConfig(
        seed=seed,
        trials=trials,
        d_k_values=tuple(config.get("d_k_values", (1, 2, 8, 32))),
        fault_injection=fault,
        max_workers=_max_workers(),
    )
    results = run_verification(cfg)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(
            f"[{status}] {result.name}: trials={result.trials} "
            f"max_error={result.max_error:.3e} tolerance={result.tolerance:.1e}"
        )
    all_passed = all(result.passed for result in results)
    report = {
        "schema_version": 1,
        "generated_at": _timestamp(),
        "seed": seed,
        "trials": trials,
        "fault_injection": fault,
        "properties": [result.as_dict() for result in results],
        "all_passed": all_passed,
    }
    out = _out_dir(args, "verify")
    _write_json(out / "verify_report.json", report)
    print(f"report written to {out / 'verify_report.json'}")
    return 0 if all_passed else VIOLATION_EXIT


def _grid_points(grid: dict) -> list[SweepPoint]:
    required = ("n_tokens", "n_heads", "d_k", "d_v")
    for key in required:
        if key not in grid or not grid[key]:
            raise ConfigurationError(f"profile grid is missing non-empty {key!r}")
    return [
        SweepPoint(n_tokens=n, n_heads=h, d_k=d_k, d_v=d_v)
        for n in grid["n_tokens"]
        for h in grid["n_heads"]
        for d_k in grid["d_k"]
        for d_v in grid["d_v"]
    ]


def _write_curve_dat(path: Path, rows, value_key: str, axis_label: str) -> None:
    """Gnuplot-style table: QK width against one column per variant.

    Uses the largest token count in the sweep; rows must share n_heads/d_v
    along the width axis for the curve to be meaningful.
    """
    variants = sorted({row["variant"] for row in rows})
    n_max = max(row["n_tokens"] for row in rows)
    widths = sorted({2 * row["d_k"] for row in rows if row["n_tokens"] == n_max})
    lookup = {
        (row["variant"], 2 * row["d_k"]): row[value_key]
        for row in rows
        if row["n_tokens"] == n_max
    }
    with open(path, "w") as fh:
        fh.write(f"# {axis_label} at n_tokens={n_max}\n")
        fh.write("# qk_width " + " ".join(variants) + "\n")
        for width in widths:
            values = " ".join(str(lookup[(variant, width)]) for variant in variants)
            fh.write(f"{width} {values}\n")


def cmd_profile(args) -> int:
    config = _load_config(args.config)
    grid = config.get("grid", DEFAULT_PROFILE_GRID)
    variant_names = args.variant or config.get("variants") or [v.value for v in Variant]
    variants = [Variant.from_string(name) for name in variant_names]
    points = _grid_points(grid)
    rows = sweep(points, variants, max_workers=_max_workers())
    try:
        check_sweep_trends(rows)
        trend_error = None
    except VerificationError as exc:
        trend_error = str(exc)
    out = _out_dir(args, "profile")
    write_sweep_csv(rows, out / "memory_flops.csv")
    _write_json(
        out / "profile_report.json",
        {
            "schema_version": 1,
            "generated_at": _timestamp(),
            "width_convention": WIDTH_CONVENTION,
            "trend_check": trend_error or "ok",
            "rows": rows,
        },
    )
    _write_curve_dat(out / "memory_vs_width.dat", rows, "total_scalars_in_place",
                     "input scalars (in-place embedding)")
    _write_curve_dat(out / "flops_vs_width.dat", rows, "flops_total", "total flops")
    print(f"{len(rows)} rows written to {out}")
    if trend_error is not None:
        print(f"trend check failed: {trend_error}", file=sys.stderr)
        return VIOLATION_EXIT
    return 0


def _build_scene(config: dict, seed: int):
    if "scene" in config:
        return load_scene(config["scene"])
    synthetic = config.get("synthetic", {})
    kind = synthetic.get("kind", "random")
    kwargs = {
        "seed": synthetic.get("seed", seed),
        "n_agents": synthetic.get("n_agents", 4),
        "n_steps": synthetic.get("n_steps", 24),
        "dt": synthetic.get("dt", 0.5),
    }
    if kind == "constant-velocity":
        return make_constant_velocity_scene(**kwargs)
    if kind == "random":
        return make_scene(**kwargs)
    raise ConfigurationError(f"unknown synthetic scene kind {kind!r}")


def cmd_rollout(args) -> int:
    config = _load_config(args.config)
    if args.scene is not None:
        config["scene"] = args.scene
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    horizon = args.horizon if args.horizon is not None else config.get("horizon", 16)
    samples = args.samples if args.samples is not None else config.get("samples", 1)
    policy_name = args.policy or config.get("policy", "pipeline")
    mode = args.mode or config.get("mode", "greedy")
    variant = Variant.from_string(args.variant or config.get("variant", "drope-hbh"))
    if horizon < 1 or samples < 1:
        raise ConfigurationError("horizon and samples must be positive")

    scene = _build_scene(config, seed)
    prefix = args.prefix if args.prefix is not None else config.get("prefix_steps")
    if prefix is None:
        prefix = max(scene.n_steps - horizon, 2) if scene.n_steps > 2 else scene.n_steps
    history = scene.prefix(prefix)

    pipe_config = PipelineConfig(
        d_model=config.get("d_model", 64),
        n_heads=config.get("n_heads", 2),
        d_k=config.get("d_k", 16),
        d_v=config.get("d_v", 32),
        n_blocks=config.get("n_blocks", 2),
        variant=variant,
    )
    weights = PipelineWeights.seeded(pipe_config, seed=seed)

    out = _out_dir(args, "rollout")
    results = []
    files = []
    for sample in range(samples):
        if policy_name == "constant":
            policy = ConstantActionPolicy(ZERO_ACTION)
        elif policy_name == "pipeline":
            policy = PipelinePolicy(weights, pipe_config, mode=mode, seed=seed + sample)
        else:
            raise ConfigurationError(f"unknown policy {policy_name!r}")
        result = rollout(history, policy, horizon)
        results.append(result)
        filename = f"trajectories_{sample:02d}.csv"
        write_trajectory_csv(out / filename, result, scene_id=0)
        files.append(filename)

    ade_per_agent = None
    ade_mean = None
    if scene.n_steps >= prefix + horizon:
        truth = scene.agent_states[:, prefix:prefix + horizon, :2]
        ade_per_agent = [
            min_ade(
                np.stack([result.positions()[agent] for result in results]),
                truth[agent],
            )
            for agent in range(scene.n_agents)
        ]
        ade_mean = float(np.mean(ade_per_agent))
        print(f"min_ade mean over agents: {ade_mean:.6f} m")
    else:
        print("scene holds no ground-truth continuation; skipping min_ade")

    _write_json(
        out / "rollout_report.json",
        {
            "schema_version": 1,
            "generated_at": _timestamp(),
            "seed": seed,
            "samples": samples,
            "horizon_steps": horizon,
            "prefix_steps": prefix,
            "dt": scene.dt,
            "policy": policy_name,
            "variant": variant.value,
            "min_ade_per_agent": ade_per_agent,
            "min_ade_mean": ade_mean,
            "trajectory_files": files,
        },
    )
    print(f"rollout artifacts written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drope-bench",
        description="verification, complexity profiling, and demo rollouts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", help="run the numerical property suite")
    profile = sub.add_parser("profile", help="emit memory and FLOP ledgers")
    roll = sub.add_parser("rollout", help="closed-loop rollout on a scene")
    for sp in (verify, profile, roll):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output directory (default <command>-out)")

    verify.add_argument("--trials", type=int, default=None)
    verify.add_argument(
        "--fault-inject", choices=[FAULT_ROPE_FREQS_IN_FANGLE], default=None,
        help="negative control: multi-frequency schedule inside the heading embedding",
    )
    verify.set_defaults(func=cmd_verify)

    profile.add_argument(
        "--variant", action="append", choices=[v.value for v in Variant],
        help="variant to profile (repeatable; default all)",
    )
    profile.set_defaults(func=cmd_profile)

    roll.add_argument("--scene", help="scene JSON file")
    roll.add_argument("--horizon", type=int, default=None)
    roll.add_argument("--prefix", type=int, default=None)
    roll.add_argument("--samples", type=int, default=None)
    roll.add_argument("--policy", choices=["pipeline", "constant"], default=None)
    roll.add_argument("--mode", choices=["greedy", "sample"], default=None)
    roll.add_argument("--variant", choices=[v.value for v in Variant], default=None)
    roll.set_defaults(func=cmd_rollout)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        return args.func(args)
    except (ConfigurationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except VerificationError as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return VIOLATION_EXIT
    except DropeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
