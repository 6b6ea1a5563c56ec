"""Command-line front end: ``reachlab <command> [options]``.

Global flags (``--config``, ``--seed``, ``--out``, ``--workers``) may appear
before or after the command name.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .evaluation import (SymmetryOffset, evaluate_controller, evaluate_obstacles, evaluate_policy, format_tables,
                         obstacle_scenes, summarize)
from .model import ModelError, RobotState
from .osc import OSC_A_GAINS, OSC_V_GAINS
from .sim import PhysicsFault, TraceWriter
from .train import train

log = logging.getLogger("reachlab")

DEFAULT_CONFIG = "planar2-reach"


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(DEFAULT_CONFIG), help="run config file or bundled config name")
    parser.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    parser.add_argument("--out", default=d("runs/latest"), help="output directory")
    parser.add_argument("--workers", type=int, default=d(1), help="parallel processes for multi-run commands")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reachlab", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = command("train", "train a policy (curriculum, evaluation, checkpoints)")
    p.add_argument("--resume", help="continue from a checkpoint, keeping its update counter")
    p.add_argument("--init", help="start from a checkpoint's weights (new inputs zero-initialised)")
    p.add_argument("--updates", type=int, help="override train.updates")
    p.add_argument("--seeds", type=int, default=1, help="train this many consecutive seeds")

    p = command("eval", "evaluate a checkpoint with the settle protocol")
    p.add_argument("checkpoint")
    p.add_argument("--trials", type=int)
    p.add_argument("--radius", type=float, help="success radius in metres")
    p.add_argument("--region", type=int, help="1-based curriculum region to sample goals from (default: last)")
    p.add_argument("--offset-trick", action="store_true", help="rotate goals outside the trained sweep into it")

    p = command("baseline", "evaluate an analytic OSC controller")
    p.add_argument("--controller", choices=("osc-v", "osc-a"), required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--horizon", type=float, help="evaluation horizon in seconds")
    p.add_argument("--damping", type=float, help="pseudoinverse damping")

    p = command("obstacle-eval", "collision statistics with 1..3 obstacles")
    p.add_argument("checkpoint")
    p.add_argument("--obstacles", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--compare", help="second checkpoint evaluated on the same scenes (e.g. obstacle-unaware)")
    p.add_argument("--trials", type=int)

    p = command("demo", "single reach, written as a CSV trace")
    p.add_argument("checkpoint")
    p.add_argument("--goal", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    p.add_argument("--start", type=float, nargs="+", help="start joint angles (default: home pose)")
    p.add_argument("--seconds", type=float, default=5.0)

    p = command("ablate-curriculum", "curriculum versus full-region training at equal budget")
    p.add_argument("--updates", type=int, help="updates per run")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--trials", type=int)
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _eval_cfg(cfg: RunConfig, args, **extra):
    ev = cfg.eval
    updates = {k: v for k, v in extra.items() if v is not None}
    if getattr(args, "trials", None) is not None:
        updates["trials"] = args.trials
    if getattr(args, "radius", None) is not None:
        updates["success_radius"] = args.radius
    if args.seed is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(ev, **updates)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n")


def _train_one(cfg: RunConfig, out: Path, resume, updates, curve_regions=False):
    result = train(cfg, out, resume=resume, curve_regions=curve_regions, max_updates=updates)
    return result


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.init:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, transfer_from=args.init))
    out = Path(args.out)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    jobs = [(dataclasses.replace(cfg, seed=s), out if len(seeds) == 1 else out / f"seed{s}") for s in seeds]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_train_one, *zip(*jobs), [args.resume] * len(jobs), [args.updates] * len(jobs)))
    else:
        results = [_train_one(c, o, args.resume, args.updates) for c, o in jobs]
    for (c, o), r in zip(jobs, results):
        last = r.metrics[-1] if r.metrics else {}
        print(f"seed {c.seed}: {r.update} updates, region {r.region + 1}/{c.schedule.k}, "
              f"avg error {last.get('avg_error_m')}, {r.seconds:.0f} s -> {o}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    ev = _eval_cfg(cfg, args)
    ck = load_checkpoint(args.checkpoint)
    _check_arch(ck.policy, cfg)
    region = cfg.schedule.regions[(args.region or cfg.schedule.k) - 1]
    offset = SymmetryOffset(cfg.schedule.regions[-1], cfg.model.n) if args.offset_trick else None
    table = summarize(evaluate_policy(ck.policy, ck.norm, cfg, ev, region, offset), ev.success_radius, "policy")
    return _emit(args, "eval", [table])


def _check_arch(policy, cfg: RunConfig) -> None:
    n = cfg.model.n
    if policy.act_dim != n or policy.obs_dim not in (3 + 2 * n, 3 + 5 * n):
        raise CheckpointError(f"checkpoint architecture ({policy.obs_dim} -> {policy.act_dim}) does not fit model "
                              f"{cfg.model_name} with {n} joints")


def cmd_baseline(args) -> int:
    cfg = _config(args)
    ev = _eval_cfg(cfg, args, horizon_s=args.horizon)
    gains = OSC_V_GAINS if args.controller == "osc-v" else OSC_A_GAINS
    if args.damping is not None:
        gains = dataclasses.replace(gains, damping=args.damping)
    trials = evaluate_controller(cfg.model, args.controller, cfg, ev, gains=gains)
    return _emit(args, "baseline", [summarize(trials, ev.success_radius, args.controller)])


def cmd_obstacle_eval(args) -> int:
    cfg = _config(args)
    ev = _eval_cfg(cfg, args)
    runs = [("policy", load_checkpoint(args.checkpoint))]
    if args.compare:
        runs.append(("compare", load_checkpoint(args.compare)))
    tables = []
    for count in args.obstacles:
        if not 1 <= count <= 3:
            raise ValueError("obstacle count must be between 1 and 3")
        scenes = obstacle_scenes(cfg, ev, count)
        for name, ck in runs:
            _check_arch(ck.policy, cfg)
            trials = evaluate_obstacles(ck.policy, ck.norm, cfg, ev, scenes)
            tables.append(summarize(trials, ev.success_radius, f"{name} {count} obs", obstacles=True))
    return _emit(args, "obstacle_eval", tables)


def cmd_demo(args) -> int:
    from .env import VecReachEnv

    cfg = _config(args)
    ck = load_checkpoint(args.checkpoint)
    _check_arch(ck.policy, cfg)
    model = cfg.model
    if args.start is not None and len(args.start) != model.n:
        raise ValueError(f"--start needs {model.n} joint angles")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    episode = dataclasses.replace(cfg.episode_config(), horizon_steps=10**9, abort_distance=np.inf)
    env = VecReachEnv(model, 1, cfg.schedule.regions[-1], episode, cfg.weights, cfg.sim, cfg.gains,
                      observe_obstacles=ck.policy.obs_dim == 3 + 5 * model.n, auto_reset=False)
    if args.start is not None:
        env.q[0] = model.clamp(np.asarray(args.start, float))
    env.need_home[0] = False
    env.reset_lane(0, goal=np.asarray(args.goal, float))
    env._refresh()
    obs = env.observe()
    path = out / "demo_trace.csv"
    with open(path, "w", newline="") as f:
        trace = TraceWriter(f, model.n)
        for k in range(int(round(args.seconds / cfg.sim.dt)) + 1):
            err = float(np.linalg.norm(env.goal[0] - env.ee[0]))
            trace.write(k * cfg.sim.dt, RobotState(env.q[0], env.qd[0], env.qdd[0]), env.ee[0], err)
            obs = env.step(ck.policy.mean(ck.norm(obs))).obs
    print(f"final error {err:.4f} m -> {path}")
    return 0


def _ablation_job(cfg: RunConfig, out: Path, updates, ev):
    res = train(cfg, out, curve_regions=True, max_updates=updates)
    trials = evaluate_policy(res.policy, res.norm, cfg, ev, cfg.schedule.regions[-1])
    return res.curves, res.metrics, summarize(trials, ev.success_radius)


def cmd_ablate_curriculum(args) -> int:
    base = _config(args)
    ev = _eval_cfg(base, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    updates = args.updates or base.train.updates
    jobs = []
    for i in range(args.seeds):
        seed = base.seed + i
        for variant in ("curriculum", "full-region"):
            cfg = dataclasses.replace(base, seed=seed)
            if variant == "full-region":
                cfg = cfg.with_regions(cfg.schedule.regions[-1:])
            # neither run may stop early on wall-clock time, so both see the same number of samples
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, max_minutes=None))
            jobs.append((variant, seed, cfg, out / f"{variant}-seed{seed}"))
    args_list = [(c, o, updates, ev) for _, _, c, o in jobs]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            outputs = list(pool.map(_ablation_job, *zip(*args_list)))
    else:
        outputs = [_ablation_job(*a) for a in args_list]

    with open(out / "curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "seed", "update", "train_region", "eval_region", "avg_error_m", "success_rate"])
        for (variant, seed, _, _), (curves, _, _) in zip(jobs, outputs):
            for row in curves:
                w.writerow([variant, seed, row["update"], row["train_region"], row["eval_region"],
                            f"{row['avg_error_m']:.9g}", f"{row['success_rate']:.6g}"])
    summary = {}
    tables = []
    for variant in ("curriculum", "full-region"):
        runs = [(s, t) for (v, s, _, _), (_, _, t) in zip(jobs, outputs) if v == variant]
        rates = [t.success_rate for _, t in runs]
        summary[variant] = {"success_rate_mean": float(np.mean(rates)), "per_seed": {str(s): t.as_dict() for s, t in runs}}
        for s, t in runs:
            t.label = f"{variant} s{s}"
            tables.append(t)
    summary["gap_pp"] = 100.0 * (summary["curriculum"]["success_rate_mean"] - summary["full-region"]["success_rate_mean"])
    summary["updates_per_run"] = updates
    _write_json(out / "ablation.json", summary)
    text = format_tables(tables) + f"\n\nseed-averaged success: curriculum {100 * summary['curriculum']['success_rate_mean']:.1f}%, " \
        f"full-region {100 * summary['full-region']['success_rate_mean']:.1f}% (gap {summary['gap_pp']:.1f} pp)"
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return 0


def _emit(args, stem: str, tables) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = [t.as_dict() for t in tables]
    _write_json(out / f"{stem}.json", data if len(data) > 1 else data[0])
    text = format_tables(tables)
    (out / f"{stem}.txt").write_text(text + "\n")
    print(text)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "obstacle-eval": cmd_obstacle_eval,
    "demo": cmd_demo,
    "ablate-curriculum": cmd_ablate_curriculum,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, ModelError, FileNotFoundError) as exc:
        print(f"reachlab: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, PhysicsFault) as exc:
        print(f"reachlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
