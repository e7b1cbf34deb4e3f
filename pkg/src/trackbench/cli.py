"""Command-line entry points: simulate, gen-dataset, evaluate, replay.

Every flag can also be supplied through a JSON config file (--config) whose
keys are the flag names with underscores; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

from .dataset import DatasetWriter
from .harness import (
    EpisodeConfig,
    EXPERT_NAMES,
    metrics_csv_path_for,
    run_episode,
    run_suite,
    serve_replay,
    write_metrics_csv,
    write_suite_csv,
    format_suite_table,
)
from .world import FieldOfView, SimConfig
from .dataset import write_episode

CONFIG_DEFAULTS = {
    "resolution": 0.1,
    "threshold": 128,
    "steps": 400,
    "targets": None,
    "dt": 0.5,
    "v_max": 1.0,
    "omega_max": math.pi / 2.0,
    "fov_radius": 5.0,
    "fov_half_angle": math.pi / 3.0,
    "sigma_threshold": None,
    "track_duration": 60,
    "replan_interval": 10,
    "rrt_iterations": 600,
    "lookahead": 0.8,
    "omega_gain": 1.0,
    "t_o": 2,
    "t_a": 16,
    "t_exec": 8,
    "n_max": 8,
    "ego_size": 64,
    "bridge_timeout": 10.0,
}


def _merge_options(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    merged = dict(CONFIG_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            file_opts = json.load(f)
        unknown = set(file_opts) - set(CONFIG_DEFAULTS) - {"map", "expert", "policy"}
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_opts)
    for key in list(merged) + ["map"]:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if not merged.get("map"):
        raise SystemExit("a map file is required (--map or config)")
    return merged


def build_episode_config(opts: dict, policy: str, seed: int) -> EpisodeConfig:
    sim = SimConfig(
        dt=opts["dt"], v_max=opts["v_max"], omega_max=opts["omega_max"],
        fov=FieldOfView(opts["fov_radius"], opts["fov_half_angle"]),
        episode_length=opts["steps"], seed=seed)
    return EpisodeConfig(
        map_path=str(opts["map"]), sim=sim, policy=policy,
        n_targets=opts["targets"], sigma_threshold=opts["sigma_threshold"],
        track_duration=opts["track_duration"],
        replan_interval=opts["replan_interval"],
        rrt_iterations=opts["rrt_iterations"], lookahead=opts["lookahead"],
        omega_gain=opts["omega_gain"], t_o=opts["t_o"], t_a=opts["t_a"],
        t_exec=opts["t_exec"], n_max=opts["n_max"], ego_size=opts["ego_size"],
        map_threshold=opts["threshold"], resolution=opts["resolution"],
        bridge_timeout=opts["bridge_timeout"])


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--map", help="path to the PGM map file")
    parser.add_argument("--config", help="JSON config file mirroring the flags")
    for key, default in CONFIG_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, int) or key in ("targets", "steps"):
            parser.add_argument(flag, type=int, default=None)
        else:
            parser.add_argument(flag, type=float, default=None)


def _parse_seeds(spec: str) -> list[int]:
    if ".." in spec:
        a, b = spec.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in spec.split(",") if s]


def _cmd_simulate(args: argparse.Namespace) -> int:
    opts = _merge_options(args)
    config = build_episode_config(opts, args.expert, args.seed)
    result = run_episode(config)
    if result.failed:
        print(f"episode failed: {result.error}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_episode(out, result.record)
    write_metrics_csv(metrics_csv_path_for(out), result.metrics)
    means = result.step_means()
    print(f"wrote {out} ({len(result.record.steps)} steps) "
          f"rmse={means['rmse']:.4f} entropy={means['entropy']:.4f} "
          f"nll={means['nll']:.4f}")
    return 0


def _cmd_gen_dataset(args: argparse.Namespace) -> int:
    opts = _merge_options(args)
    experts = [e.strip() for e in args.experts.split(",") if e.strip()]
    for e in experts:
        if e not in EXPERT_NAMES:
            raise SystemExit(f"unknown expert {e!r}")
    writer = DatasetWriter(args.out_dir)
    index = 0
    for expert in experts:
        for _ in range(args.episodes_per_expert):
            seed = args.seed + index
            config = build_episode_config(opts, expert, seed)
            result = run_episode(config)
            if result.failed:
                print(f"episode failed ({expert}, seed {seed}): {result.error}",
                      file=sys.stderr)
                return 1
            name = writer.add_episode(result.record)
            print(f"{name}: expert={expert} seed={seed}")
            index += 1
    summary = {k: opts[k] for k in sorted(CONFIG_DEFAULTS)}
    summary["map"] = str(opts["map"])
    summary["experts"] = experts
    writer.finalize(summary)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    opts = _merge_options(args)
    seeds = _parse_seeds(args.seeds)
    config = build_episode_config(opts, args.policy[0], seeds[0])
    result = run_suite(config, args.policy, seeds, record_dir=args.record_dir,
                       workers=args.workers)
    write_suite_csv(args.out, result)
    print(format_suite_table(result))
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    outputs = serve_replay(args.episode, args.out_dir, metrics_csv=args.metrics)
    for key, path in outputs.paths.items():
        print(f"{key}: {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="trackbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one expert episode and record it")
    _add_common(p)
    p.add_argument("--expert", required=True, choices=EXPERT_NAMES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="episode JSONL output path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen-dataset", help="record expert demonstration episodes")
    _add_common(p)
    p.add_argument("--experts", default="frontier,uncertainty,time")
    p.add_argument("--episodes-per-expert", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("evaluate", help="run seeded episodes and tabulate metrics")
    _add_common(p)
    p.add_argument("--policy", action="append", required=True,
                   help="expert name or bridge:<command>; repeatable")
    p.add_argument("--seeds", required=True, help="a..b inclusive or comma list")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--record-dir", default=None)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel episode workers (episodes are independent)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("replay", help="plot a recorded episode")
    p.add_argument("--episode", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--metrics", default=None,
                   help="metrics CSV (default: sibling of the episode file)")
    p.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
