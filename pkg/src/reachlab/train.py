"""Training loop: rollouts, PPO updates, periodic evaluation and curriculum advancement."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .env import VecReachEnv, observation_dim
from .policy import GaussianPolicy, RunningNorm, widen_inputs
from .ppo import Adam, collect_rollouts, ppo_update
from .regions import advance_curriculum

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    policy: GaussianPolicy
    norm: RunningNorm
    metrics: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    region: int = 0
    update: int = 0
    seconds: float = 0.0


def make_env(cfg: RunConfig, num_envs: int, region, seed, obstacles: bool | None = None,
             observe_obstacles: bool | None = None, auto_reset: bool = True) -> VecReachEnv:
    obstacles = cfg.obstacles.enabled if obstacles is None else obstacles
    return VecReachEnv(cfg.model, num_envs, region, cfg.episode_config(), cfg.weights, cfg.sim, cfg.gains,
                       obstacles=obstacles, observe_obstacles=observe_obstacles, seed=seed, auto_reset=auto_reset)


def quick_eval(policy: GaussianPolicy, norm: RunningNorm, cfg: RunConfig, region, episodes: int, seed) -> dict:
    """One deterministic episode per lane from the home pose; error taken when the episode ends."""
    with_obstacles = policy.obs_dim == observation_dim(cfg.model.n, True) and cfg.obstacles.enabled
    env = make_env(cfg, episodes, region, seed, obstacles=with_obstacles, auto_reset=False)
    obs = env.reset()
    final = np.full(episodes, np.nan)
    collided = np.zeros(episodes, dtype=bool)
    for _ in range(cfg.episode.horizon_steps):
        res = env.step(policy.mean(norm(obs)))
        for rec in res.records:
            if np.isnan(final[rec.lane]):
                final[rec.lane] = rec.final_error_m
                collided[rec.lane] = rec.collisions > 0
        obs = res.obs
        if not np.isnan(final).any():
            break
    return {
        "avg_error_m": float(np.mean(final)),
        "success_rate": float(np.mean(final < cfg.eval.success_radius)),
        "collision_free": float(np.mean(~collided)),
    }


def _jsonable(row: dict) -> dict:
    return {k: (float(v) if isinstance(v, np.floating) else v) for k, v in row.items()}


def train(cfg: RunConfig, out_dir: str | Path | None = None, resume: str | Path | None = None,
          curve_regions: bool = False, max_updates: int | None = None) -> TrainResult:
    """Run PPO with curriculum advancement.

    Writes ``metrics.jsonl``, ``episodes.jsonl`` and checkpoints to ``out_dir``
    when given. With ``curve_regions`` every evaluation also measures the
    error on each curriculum region (the error-versus-updates curves).
    """
    schedule, pc = cfg.schedule, cfg.ppo
    obs_dim = observation_dim(cfg.model.n, cfg.obstacles.enabled)
    start, region = 0, 0
    adam = None
    if resume is not None:
        ck = load_checkpoint(resume, pc.learning_rate)
        policy, norm, adam, start, region = ck.policy, ck.norm, ck.adam, ck.update, ck.region
        if policy.obs_dim != obs_dim:
            raise ValueError(f"checkpoint expects {policy.obs_dim} inputs, this run produces {obs_dim}")
    elif cfg.train.transfer_from:
        ck = load_checkpoint(cfg.train.transfer_from)
        policy, norm = widen_inputs(ck.policy, ck.norm, obs_dim)
    else:
        policy = GaussianPolicy(obs_dim, cfg.model.n, pc.hidden)
        policy.initialize(np.random.default_rng([cfg.seed, 1]), _action_scale(cfg))
        norm = RunningNorm.create(obs_dim)
    if adam is None:
        adam = Adam(policy.theta.size, pc.learning_rate, pc.adam_betas, pc.adam_eps)
    region = min(region, schedule.k - 1)

    out = Path(out_dir) if out_dir is not None else None
    metrics_f = episodes_f = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        mode = "a" if resume is not None else "w"
        metrics_f = open(out / "metrics.jsonl", mode)
        episodes_f = open(out / "episodes.jsonl", mode)

    rng = np.random.default_rng([cfg.seed, 2, start])
    env = make_env(cfg, pc.env_count, schedule.regions[region], np.random.SeedSequence([cfg.seed, 3, start]))
    result = TrainResult(policy, norm, region=region, update=start)
    last_eval = {"avg_error_m": None, "success_rate": None}
    total = cfg.train.updates if max_updates is None else max_updates
    t0 = time.monotonic()
    obs = None

    def checkpoint(name):
        if out is None:
            return
        path = out / name
        save_checkpoint(path, Checkpoint(policy, norm, cfg.seed, result.update, region, adam))
        result.checkpoints.append(path)

    try:
        for update in range(start, total):
            batch, obs = collect_rollouts(env, policy, norm, pc.horizon, rng, obs)
            norm.update(batch.raw_obs)
            stats = ppo_update(policy, batch, pc, adam, rng)
            result.update = update + 1
            if episodes_f is not None:
                for rec in batch.records:
                    episodes_f.write(json.dumps(rec.as_dict()) + "\n")
            advanced = False
            if result.update % schedule.eval_cadence == 0:
                seed = np.random.SeedSequence([cfg.seed, 4, result.update])
                last_eval = quick_eval(policy, norm, cfg, schedule.regions[region], cfg.train.eval_episodes, seed)
                if curve_regions:
                    for i, reg in enumerate(schedule.regions):
                        ev = quick_eval(policy, norm, cfg, reg, cfg.train.eval_episodes, seed)
                        result.curves.append({"update": result.update, "train_region": region + 1,
                                              "eval_region": i + 1, "avg_error_m": ev["avg_error_m"],
                                              "success_rate": ev["success_rate"]})
                new_region = advance_curriculum(schedule, last_eval["avg_error_m"], region)
                advanced = new_region != region
            row = _jsonable({
                "update": result.update,
                "region": region + 1,
                "reward_mean": float(batch.rewards.mean()),
                "avg_error_m": last_eval["avg_error_m"],
                "success_rate": last_eval["success_rate"],
                **{k: stats[k] for k in ("policy_loss", "value_loss", "clip_fraction", "kl")},
            })
            result.metrics.append(row)
            if metrics_f is not None:
                metrics_f.write(json.dumps(row) + "\n")
                metrics_f.flush()
            if advanced:
                checkpoint(f"region{region + 1}.ckpt")
                log.info("update %d: region %d cleared (avg error %.4f m)", result.update, region + 1, last_eval["avg_error_m"])
                region = new_region
                result.region = region
                env.set_region(schedule.regions[region])
            if cfg.train.checkpoint_every and result.update % cfg.train.checkpoint_every == 0:
                checkpoint(f"update{result.update}.ckpt")
            if cfg.train.max_minutes is not None and time.monotonic() - t0 > 60.0 * cfg.train.max_minutes:
                log.info("time budget reached after %d updates", result.update)
                break
    finally:
        checkpoint("final.ckpt")
        result.seconds = time.monotonic() - t0
        for f in (metrics_f, episodes_f):
            if f is not None:
                f.close()
    return result


def _action_scale(cfg: RunConfig) -> np.ndarray:
    scale = cfg.episode.action_scale
    return cfg.model.qdot_limit.copy() if scale is None else np.broadcast_to(np.asarray(scale, float), (cfg.model.n,))
