"""Command-line harness: simulate, train, evaluate, sweep and gen subcommands.

Every command writes into one output directory together with the resolved
config (``config.json``) and a provenance stamp (``provenance.json``). Errors
print one line ``perpl: error[<Class>]: <message>`` to stderr and exit with
2 (config), 3 (data) or 4 (numerical abort).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import CONTROLLERS, SPLITS, ExperimentConfig, load_config, split_trajectories
from .engine import evaluate, run_episode, summarize, train, write_speed_field, write_trace
from .errors import ConfigError, DataError, NumericalAbort, PerplError
from .metrics import MetricsReport, episode_report
from .rl.policy import Policy, read_checkpoint
from .rl.ppo import Adam
from .scenarios import (Manifest, generate_split, extremize, load_trajectory, penetration_platoon,
                        synth_trajectory, write_trajectory)

log = logging.getLogger("perpl")

OUTPUT_ROOT_ENV = "PERPL_OUTPUT_ROOT"
SUMMARY_COLUMNS = ("split", "controller", "group", "episodes", "collisions", "headway_rmse",
                   "barrier_activation_pct", "damping_ratio", "comfort")


# --------------------------------------------------------------------------- helpers

def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def output_dir(cfg: ExperimentConfig, out: str | None, command: str) -> Path:
    """``--out`` (or ``<config output>/<command>``), placed under $PERPL_OUTPUT_ROOT when relative."""
    path = Path(out) if out else Path(cfg.raw["output"]) / command
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_provenance(out: Path, cfg: ExperimentConfig, command: str, options: dict[str, Any]) -> None:
    (out / "config.json").write_text(cfg.to_json())
    stamp = {"command": command, "seed": cfg.seed, "version": __version__, "options": options}
    (out / "provenance.json").write_text(json.dumps(stamp, indent=2, sort_keys=True) + "\n")


def load_policy(path: str | None, controller: str) -> Policy | None:
    if path is None:
        if controller == "rl":
            raise ConfigError("--policy: the rl controller needs a trained checkpoint")
        return None
    return Policy.load(path)


def write_summary(out: Path, rows: list[dict[str, Any]]) -> None:
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    (out / "summary.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def summary_rows(split: str, controller: str, reports: Sequence[MetricsReport]) -> list[dict[str, Any]]:
    rows = []
    for group in ("cav", "followers"):
        s = summarize(reports, group)
        rows.append({"split": split, "controller": controller, "group": group, **s})
    return rows


# --------------------------------------------------------------------------- commands

def cmd_simulate(cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    controller = args.controller or cfg.raw["platoon"]["controller"]
    policy = load_policy(args.policy, controller)
    lead = load_trajectory(args.traj, cfg.data["column_map"], dt=cfg.sim.dt)
    out = output_dir(cfg, args.out, "simulate")
    write_provenance(out, cfg, "simulate", {"traj": Path(args.traj).name, "controller": controller,
                                            "policy": args.policy is not None})
    trace = run_episode(cfg.platoon(controller), lead, policy, cfg.sim, idm=cfg.idm, gains=cfg.gains,
                        reward_weights=cfg.reward)
    write_trace(out / "trace.csv", trace)
    write_speed_field(out / "speed_field.csv", trace)
    report = episode_report(trace, cfg.sim, cfg.alpha)
    report.write(out / "report.json")
    agg = report.aggregate["cav"]
    print(f"simulate: {len(trace)} steps, collided={trace.collided}, cav headway_rmse={_fmt(agg['headway_rmse'])}")
    return out


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    controller = args.controller or cfg.raw["platoon"]["controller"]
    if controller == "linear":
        raise ConfigError("--controller: linear has nothing to train; use rl or perpl")
    iterations = args.iterations or cfg.iterations
    trajs = split_trajectories(cfg, args.split)
    policy = optimizer = None
    start = 0
    if args.resume:
        raw = read_checkpoint(args.resume)
        policy = Policy.from_dict(raw)
        if "optimizer" in raw:
            optimizer = Adam.from_state(raw["optimizer"])
        start = int(policy.meta.get("iterations", 0))
        if policy.meta.get("controller", controller) != controller:
            raise ConfigError(f"--resume: checkpoint was trained for {policy.meta['controller']!r}")
    out = output_dir(cfg, args.out, "train")
    write_provenance(out, cfg, "train", {"split": args.split, "controller": controller,
                                         "iterations": iterations, "start_iteration": start})

    def progress(it, pol, opt, row):
        if it % max(1, iterations // 10) == 0 or it == start + iterations:
            log.info("iteration %d: mean_reward=%.4f value_loss=%.4f clip_fraction=%.3f",
                     it, row["mean_reward"], row["value_loss"], row["clip_fraction"])
        if args.checkpoint_every and it % args.checkpoint_every == 0:
            pol.save(out / f"checkpoint_{it:05d}.json", opt.state_dict())

    result = train(trajs, cfg.platoon(controller), cfg.ppo, iterations, cfg.seed, cfg=cfg.sim, idm=cfg.idm,
                   gains=cfg.gains, reward_weights=cfg.reward, policy=policy, optimizer=optimizer,
                   start_iteration=start, on_iteration=progress)
    result.policy.save(out / "policy.json", result.optimizer.state_dict())
    with (out / "learning_curve.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_reward", "value_loss", "clip_fraction"])
        for row in result.curve:
            w.writerow([row["iteration"], repr(row["mean_reward"]), repr(row["value_loss"]),
                        repr(row["clip_fraction"])])
    last = result.curve[-1]
    print(f"train: {controller} {result.iterations} iterations, final mean_reward={last['mean_reward']:.4f}")
    return out


def cmd_evaluate(cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    controller = args.controller or cfg.raw["platoon"]["controller"]
    policy = load_policy(args.policy, controller)
    splits = list(SPLITS) if args.split == "all" else [args.split]
    out = output_dir(cfg, args.out, "evaluate")
    write_provenance(out, cfg, "evaluate", {"split": args.split, "controller": controller,
                                            "policy": args.policy is not None, "traces": args.traces})
    rows = []
    for split in splits:
        trajs = split_trajectories(cfg, split)
        trace_dir = out / "traces" / split if args.traces else None
        reports = evaluate(trajs, cfg.platoon(controller), policy, cfg.sim, idm=cfg.idm, gains=cfg.gains,
                           alpha=cfg.alpha, trace_dir=trace_dir)
        (out / f"reports_{split}.json").write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
        rows.extend(summary_rows(split, controller, reports))
    write_summary(out, rows)
    for row in rows:
        if row["group"] == "cav":
            print(f"evaluate: {row['split']:<13} {controller:<6} headway_rmse={_fmt(row['headway_rmse'])} "
                  f"barrier%={_fmt(row['barrier_activation_pct'])}")
    return out


def parse_list(text: str | None, cast) -> list | None:
    if text is None:
        return None
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}: {exc}") from exc


def sweep_lead(cfg: ExperimentConfig, seed: int):
    lead = cfg.sweep["lead"]
    try:
        return synth_trajectory(lead["kind"], lead["params"], seed=seed)
    except ValueError as exc:
        raise ConfigError(f"sweep.lead.params: {exc}") from exc


def cmd_sweep(cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    rates = parse_list(args.rates, float) or cfg.sweep["rates"]
    seeds = parse_list(args.seeds, int) or cfg.sweep["seeds"]
    followers = args.followers or cfg.sweep["followers"]
    controller = args.controller or cfg.sweep["controller"]
    if any(not 0 <= r <= 1 for r in rates):
        raise ConfigError("--rates: fractions must lie in [0, 1]")
    policy = load_policy(args.policy, controller)
    out = output_dir(cfg, args.out, "sweep")
    write_provenance(out, cfg, "sweep", {"rates": rates, "seeds": seeds, "followers": followers,
                                         "controller": controller, "policy": args.policy is not None})
    per_run, per_rate = [], []
    for rate in rates:
        damping, rmse = [], []
        for seed in seeds:
            spec = penetration_platoon(followers, rate, seed, controller)
            trace = run_episode(spec, sweep_lead(cfg, seed), policy, cfg.sim, idm=cfg.idm, gains=cfg.gains)
            write_speed_field(out / f"speed_field_rate{rate:.2f}_seed{seed}.csv", trace)
            agg = episode_report(trace, cfg.sim, cfg.alpha).aggregate["followers"]
            per_run.append({"rate": rate, "seed": seed, "cavs": len(spec.cav_indices),
                            "collided": trace.collided, **agg})
            damping.append(agg["damping_ratio"])
            rmse.append(agg["headway_rmse"])
        per_rate.append({"rate": rate, "seeds": len(seeds),
                         "damping_ratio": float(np.mean([d for d in damping if d is not None])),
                         "headway_rmse": float(np.mean([r for r in rmse if r is not None]))})
    cols = ("rate", "seed", "cavs", "collided", "headway_rmse", "damping_ratio", "comfort",
            "barrier_activation_pct")
    with (out / "sweep_runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in per_run:
            w.writerow([_fmt(row[c]) for c in cols])
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("rate", "seeds", "damping_ratio", "headway_rmse"))
        for row in per_rate:
            w.writerow([_fmt(row[c]) for c in ("rate", "seeds", "damping_ratio", "headway_rmse")])
    for row in per_rate:
        print(f"sweep: rate={row['rate']:.2f} damping_ratio={row['damping_ratio']:.4f}")
    return out


def cmd_gen(cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    kinds = parse_list(args.kind, str) or cfg.data["kinds"]
    gain = args.extremize_gain if args.extremize_gain is not None else cfg.data["extremize_gain"]
    if gain < 1:
        raise ConfigError("--extremize-gain: must be >= 1")
    out = output_dir(cfg, args.out, "gen")
    write_provenance(out, cfg, "gen", {"kinds": kinds, "count": args.count, "extremize_gain": gain})
    entries = []
    for idx, split in enumerate(SPLITS):
        count = args.count or cfg.data[split]
        try:
            trajs = generate_split(kinds, count, seed=[cfg.data["seed"], idx], params=cfg.data["params"])
        except ValueError as exc:
            raise ConfigError(f"data.params: {exc}") from exc
        if split == "extrapolation":
            trajs = [extremize(t, gain, cfg.data["decel_cap"], cfg.data["accel_cap"]) for t in trajs]
        for i, traj in enumerate(trajs):
            rel = Path("trajectories") / split / f"{i:03d}_{kinds[i % len(kinds)]}.csv"
            write_trajectory(out / rel, traj)
            entries.append((rel, split))
    Manifest(entries, root=out).save(out / "manifest.json")
    print(f"gen: {len(entries)} trajectories, manifest at {out / 'manifest.json'}")
    return out


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perpl", description="Mixed-traffic CAV platoon simulator "
                                     "with a linear + residual-PPO controller and a headway safety barrier.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set sim.tau_c=0.2 (repeatable)")
    common.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    common.add_argument("--out", help=f"output directory; relative paths go under ${OUTPUT_ROOT_ENV} when set")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one episode on a trajectory file")
    p.add_argument("--traj", required=True, help="delimiter-separated lead trajectory with a header row")
    p.add_argument("--policy", help="policy checkpoint (rl/perpl)")
    p.add_argument("--controller", choices=CONTROLLERS)

    p = sub.add_parser("train", parents=[common], help="train an rl or perpl policy with PPO")
    p.add_argument("--split", default="train", choices=SPLITS)
    p.add_argument("--controller", choices=("rl", "perpl"))
    p.add_argument("--iterations", type=int, help="PPO iterations (overrides train.iterations)")
    p.add_argument("--resume", help="continue from a checkpoint written by train")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                   help="also save checkpoint_<iteration>.json every N iterations")

    p = sub.add_parser("evaluate", parents=[common], help="deterministic evaluation and summary table")
    p.add_argument("--split", default="test", choices=(*SPLITS, "all"))
    p.add_argument("--policy", help="policy checkpoint (rl/perpl); perpl without one runs the linear law")
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--traces", action="store_true", help="also dump one trace file per episode")

    p = sub.add_parser("sweep", parents=[common], help="penetration-rate sweep on a long mixed platoon")
    p.add_argument("--rates", help="comma-separated CAV fractions, e.g. 0,0.5,1")
    p.add_argument("--followers", type=int)
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--policy")
    p.add_argument("--controller", choices=CONTROLLERS)

    p = sub.add_parser("gen", parents=[common], help="write synthetic train/test/extrapolation files + manifest")
    p.add_argument("--kind", help="comma-separated kinds (sinusoid, brake-pulse, stop-and-go)")
    p.add_argument("--count", type=int, help="trajectories per split (default: config data counts)")
    p.add_argument("--extremize-gain", type=float)
    return parser


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "gen": cmd_gen}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except PerplError as exc:
        print(f"perpl: error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"perpl: error[NumericalAbort]: {exc}", file=sys.stderr)
        return NumericalAbort.exit_code
    except OSError as exc:
        print(f"perpl: error[DataError]: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
