"""Evaluation protocol and metric tables for learned policies and OSC baselines.

Trials are spread over L lanes that are simulated together; lane ``b`` runs
trials ``b, b + L, b + 2L, ...`` one after the other, each starting from the
pose the previous one ended in. A trial ends when the arm has settled
(``|qdot|_inf`` below ``settle_velocity`` for ``settle_window_s``) or when the
horizon runs out.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .config import EvalConfig, RunConfig
from .dynamics import ee_position, jacobian
from .env import VecReachEnv, place_obstacles
from .model import ArmModel, RobotState
from .obstacles import ObstacleSet, grazing_ratio
from .osc import OSC_A_GAINS, OSC_V_GAINS, NullSpaceObjective, OscAController, OscVController, TaskGains, TaskTarget, damped_pseudoinverse
from .policy import GaussianPolicy, RunningNorm
from .regions import Region, sample_goal
from .sim import SimConfig, step


@dataclass
class Trial:
    settled: bool
    final_error_m: float
    completion_time_s: float | None = None
    collisions: int = 0
    grazing_ratios: list = field(default_factory=list)


@dataclass
class MetricsTable:
    trials: int
    success_radius_m: float
    success_rate: float
    average_error_m: float | None
    average_error_all_m: float
    completion_time_mean_s: float | None
    completion_time_std_s: float | None
    settled_rate: float
    collision_free_rate: float | None = None
    grazing_ratio_mean: float | None = None
    grazing_ratio_std: float | None = None
    label: str = ""

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(trials: list[Trial], success_radius: float, label: str = "", obstacles: bool = False) -> MetricsTable:
    """Aggregate trials: success needs a settled arm within ``success_radius``;
    the average error and completion time are taken over settled trials."""
    if not trials:
        raise ValueError("no trials to summarize")
    settled = [t for t in trials if t.settled]
    success = [t.settled and t.final_error_m < success_radius for t in trials]
    times = [t.completion_time_s for t in settled if t.completion_time_s is not None]
    ratios = [r for t in trials for r in t.grazing_ratios]
    table = MetricsTable(
        trials=len(trials),
        success_radius_m=success_radius,
        success_rate=float(np.mean(success)),
        average_error_m=float(np.mean([t.final_error_m for t in settled])) if settled else None,
        average_error_all_m=float(np.mean([t.final_error_m for t in trials])),
        completion_time_mean_s=float(np.mean(times)) if times else None,
        completion_time_std_s=float(np.std(times)) if times else None,
        settled_rate=len(settled) / len(trials),
        label=label,
    )
    if obstacles:
        table.collision_free_rate = float(np.mean([t.collisions == 0 for t in trials]))
        table.grazing_ratio_mean = float(np.mean(ratios)) if ratios else None
        table.grazing_ratio_std = float(np.std(ratios)) if ratios else None
    return table


def _fmt(v, scale=1.0, unit=""):
    return "-" if v is None else f"{v * scale:.3f}{unit}"


def format_tables(tables: list[MetricsTable]) -> str:
    """Plain-text table, one column per metrics table."""
    rows = [("", [t.label or f"run {i + 1}" for i, t in enumerate(tables)])]
    radius = tables[0].success_radius_m * 100
    rows.append(("no. trials", [str(t.trials) for t in tables]))
    rows.append((f"success@{radius:.1f} cm", [f"{100 * t.success_rate:.1f}%" for t in tables]))
    rows.append(("average error (cm)", [_fmt(t.average_error_m, 100) for t in tables]))
    rows.append(("average error, all trials (cm)", [_fmt(t.average_error_all_m, 100) for t in tables]))
    rows.append(("completion time (s)", [
        "-" if t.completion_time_mean_s is None else f"{t.completion_time_mean_s:.2f} +- {t.completion_time_std_s:.2f}" for t in tables]))
    rows.append(("settled", [f"{100 * t.settled_rate:.1f}%" for t in tables]))
    if any(t.collision_free_rate is not None for t in tables):
        rows.append(("collision-free", ["-" if t.collision_free_rate is None else f"{100 * t.collision_free_rate:.1f}%" for t in tables]))
        rows.append(("grazing ratio", [
            "-" if t.grazing_ratio_mean is None else f"{t.grazing_ratio_mean:.2f} +- {t.grazing_ratio_std:.2f}" for t in tables]))
    width = max(len(r[0]) for r in rows)
    cols = [max(len(r[1][j]) for r in rows) for j in range(len(tables))]
    lines = []
    for name, vals in rows:
        lines.append(name.ljust(width) + "  " + "  ".join(v.rjust(c) for v, c in zip(vals, cols)))
    return "\n".join(lines)


class _SettleTracker:
    """Per-lane settle bookkeeping shared by all evaluation loops."""

    def __init__(self, lanes: int, ev: EvalConfig, dt: float):
        self.window = max(1, int(round(ev.settle_window_s / dt)))
        self.horizon = int(round(ev.horizon_s / dt))
        self.v = ev.settle_velocity
        self.dt = dt
        self.quiet = np.zeros(lanes, dtype=int)
        self.moved = np.zeros(lanes, dtype=bool)
        self.ticks = np.zeros(lanes, dtype=int)

    def start(self, b: int, already_there: bool) -> None:
        self.quiet[b] = 0
        self.ticks[b] = 0
        self.moved[b] = already_there

    def update(self, qdot) -> tuple[np.ndarray, np.ndarray]:
        """Returns (settled, timed_out) masks after one tick."""
        still = np.max(np.abs(qdot), axis=1) < self.v
        self.moved |= ~still
        self.quiet = np.where(still & self.moved, self.quiet + 1, 0)
        self.ticks += 1
        settled = self.quiet >= self.window
        return settled, ~settled & (self.ticks >= self.horizon)

    def completion_time(self, b: int) -> float:
        return (self.ticks[b] - self.window) * self.dt


def solve_ik(model: ArmModel, target, q0, iters: int = 200, damping: float = 1e-3, tol: float = 1e-9) -> np.ndarray:
    """Damped least-squares position IK started from ``q0`` (stays on that branch)."""
    q = np.array(q0, dtype=float)
    for _ in range(iters):
        err = np.asarray(target) - ee_position(model, q)
        if np.linalg.norm(err) < tol:
            break
        q = model.clamp(q + damped_pseudoinverse(jacobian(model, q), damping) @ err)
    return q


def _policy_env(cfg: RunConfig, lanes: int, region: Region, ev: EvalConfig, obstacles: bool, observe: bool) -> VecReachEnv:
    steps = int(round(ev.horizon_s / cfg.sim.dt))
    episode = dataclasses.replace(cfg.episode_config(), horizon_steps=steps + 1, abort_distance=np.inf)
    return VecReachEnv(cfg.model, lanes, region, episode, cfg.weights, cfg.sim, cfg.gains,
                       obstacles=obstacles, observe_obstacles=observe, seed=0, auto_reset=False)


def evaluate_policy(policy: GaussianPolicy, norm: RunningNorm, cfg: RunConfig, ev: EvalConfig,
                    region: Region | None = None, offset=None) -> list[Trial]:
    """Sequential-goal evaluation of the deterministic (mean) policy without obstacles."""
    region = region or cfg.schedule.regions[-1]
    if ev.trials <= 0:
        raise ValueError("evaluation needs at least one trial")
    lanes = min(ev.lanes, ev.trials)
    env = _policy_env(cfg, lanes, region, ev, obstacles=False, observe=policy.obs_dim > 3 + 2 * cfg.model.n)
    tracker = _SettleTracker(lanes, ev, cfg.sim.dt)
    goals = _goal_stream(region, ev)
    trial_of = -np.ones(lanes, dtype=int)
    results: list[Trial | None] = [None] * ev.trials
    next_trial = 0

    def begin(b):
        nonlocal next_trial
        if next_trial >= ev.trials:
            trial_of[b] = -1
            return
        trial_of[b] = next_trial
        env.need_home[b] = False
        env.reset_lane(b, goal=goals[next_trial])
        err = np.linalg.norm(env.goal[b] - env.start[b])
        tracker.start(b, err < ev.success_radius)
        next_trial += 1

    for b in range(lanes):
        begin(b)
    env._refresh()
    obs = env.observe()
    while (trial_of >= 0).any():
        x = obs if offset is None else offset.observe(obs, env)
        res = env.step(policy.mean(norm(x)))
        settled, timed_out = tracker.update(env.qd)
        done = (settled | timed_out) & (trial_of >= 0)
        for b in np.flatnonzero(done):
            err = float(np.linalg.norm(env.goal[b] - env.ee[b]))
            results[trial_of[b]] = Trial(bool(settled[b]), err, tracker.completion_time(b) if settled[b] else None)
            begin(b)
        if done.any():
            env._refresh()
            obs = env.observe()
        else:
            obs = res.obs
        # idle lanes keep their last command; they no longer count
    return results


def _goal_stream(region: Region, ev: EvalConfig) -> np.ndarray:
    rng = np.random.default_rng([ev.seed, 11])
    return np.array([sample_goal(region, rng) for _ in range(ev.trials)])


@dataclass
class ObstacleScene:
    q_start: np.ndarray
    goal: np.ndarray
    obstacles: ObstacleSet


def obstacle_scenes(cfg: RunConfig, ev: EvalConfig, count: int, region: Region | None = None) -> list[ObstacleScene]:
    """Independent trials with sampled start pose, goal and ``count`` obstacles.

    Scenes depend only on the seed, so different policies face identical ones.
    """
    from .fastsim import BatchServo  # local: only needed here

    region = region or cfg.schedule.regions[-1]
    model = cfg.model
    servo = BatchServo(model, cfg.gains, cfg.sim)
    home = model.home_pose if cfg.episode.home_pose is None else np.asarray(cfg.episode.home_pose, float)
    rng = np.random.default_rng([ev.seed, 13, count])
    scenes = []
    while len(scenes) < ev.trials:
        start = sample_goal(region, rng)
        q_start = solve_ik(model, start, home)
        ee, centers = servo.positions(q_start[None])
        if np.linalg.norm(ee[0] - start) > 1e-6:
            continue
        goal = sample_goal(region, rng)
        obs = place_obstacles(region, ee[0], goal, count, rng, cfg.obstacles.radius, cfg.obstacles.clearance,
                              (centers[0], model.sphere_radii))
        scenes.append(ObstacleScene(q_start, goal, obs))
    return scenes


def evaluate_obstacles(policy: GaussianPolicy, norm: RunningNorm, cfg: RunConfig, ev: EvalConfig,
                       scenes: list[ObstacleScene]) -> list[Trial]:
    """Run each scene from rest at its start pose; records contacts and grazing ratios."""
    if not scenes:
        raise ValueError("evaluation needs at least one trial")
    n = cfg.model.n
    observe = policy.obs_dim == 3 + 5 * n
    lanes = min(ev.lanes, len(scenes))
    env = _policy_env(cfg, lanes, cfg.schedule.regions[-1], ev, obstacles=False, observe=observe)
    tracker = _SettleTracker(lanes, ev, cfg.sim.dt)
    trial_of = -np.ones(lanes, dtype=int)
    results: list[Trial | None] = [None] * len(scenes)
    ratios = [[] for _ in range(lanes)]
    next_trial = 0

    def begin(b):
        nonlocal next_trial
        if next_trial >= len(scenes):
            trial_of[b] = -1
            env.obs_valid[b] = False
            return
        sc = scenes[next_trial]
        trial_of[b] = next_trial
        env.q[b], env.qd[b] = sc.q_start, 0.0
        env.need_home[b] = False
        env.reset_lane(b, goal=sc.goal, scene=sc.obstacles)
        tracker.start(b, np.linalg.norm(sc.goal - env.start[b]) < ev.success_radius)
        ratios[b] = []
        next_trial += 1

    for b in range(lanes):
        begin(b)
    env._refresh()
    obs = env.observe()
    prev_centers = env.centers.copy()
    prev_contact = np.zeros((lanes, len(cfg.model.spheres)), dtype=bool)
    while (trial_of >= 0).any():
        res = env.step(policy.mean(norm(obs)))
        centers = env.centers
        gap = _sphere_gaps(env)
        contact = gap <= 0
        for b, s in zip(*np.nonzero(contact & ~prev_contact)):
            if trial_of[b] < 0:
                continue
            k = int(np.argmin(np.where(env.obs_valid[b], np.linalg.norm(env.obs_c[b] - centers[b, s], axis=1) - env.obs_r[b], np.inf)))
            r = grazing_ratio(env.obs_c[b, k] - centers[b, s], (centers[b, s] - prev_centers[b, s]) / cfg.sim.dt)
            if r is not None:
                ratios[b].append(r)
        prev_contact = contact
        prev_centers = centers.copy()
        settled, timed_out = tracker.update(env.qd)
        done = (settled | timed_out) & (trial_of >= 0)
        for b in np.flatnonzero(done):
            err = float(np.linalg.norm(env.goal[b] - env.ee[b]))
            results[trial_of[b]] = Trial(bool(settled[b]), err, tracker.completion_time(b) if settled[b] else None,
                                         int(env.collisions[b]), list(ratios[b]))
            begin(b)
            prev_contact[b] = False
        if done.any():
            env._refresh()
            obs = env.observe()
            prev_centers = env.centers.copy()
        else:
            obs = res.obs
    return results


def _sphere_gaps(env: VecReachEnv) -> np.ndarray:
    """Separation of every arm sphere from its nearest obstacle, (lanes, spheres)."""
    v = env.centers[:, :, None, :] - env.obs_c[:, None, :, :]
    sep = np.linalg.norm(v, axis=-1) - env.obs_r[:, None, :] - env.model.sphere_radii[None, :, None]
    sep = np.where(env.obs_valid[:, None, :], sep, np.inf)
    return sep.min(axis=-1)


def evaluate_controller(model: ArmModel, kind: str, cfg: RunConfig, ev: EvalConfig, region: Region | None = None,
                        gains: TaskGains | None = None, ns: NullSpaceObjective | None = None) -> list[Trial]:
    """Sequential-goal evaluation of an analytic OSC law in torque control."""
    if kind not in ("osc-v", "osc-a"):
        raise ValueError(f"unknown controller {kind!r}")
    if ev.trials <= 0:
        raise ValueError("evaluation needs at least one trial")
    region = region or cfg.schedule.regions[-1]
    sim = cfg.sim
    lanes = min(ev.lanes, ev.trials)
    if kind == "osc-v":
        ctrl = OscVController(model, gains or OSC_V_GAINS, ns, sim.dt)
    else:
        ctrl = OscAController(model, gains or OSC_A_GAINS, ns, sim.dt)
    home = model.home_pose if cfg.episode.home_pose is None else np.asarray(cfg.episode.home_pose, float)
    q = np.tile(home, (lanes, 1))
    qd = np.zeros_like(q)
    goal = np.zeros((lanes, 3))
    tracker = _SettleTracker(lanes, ev, sim.dt)
    goals = _goal_stream(region, ev)
    trial_of = -np.ones(lanes, dtype=int)
    results: list[Trial | None] = [None] * ev.trials
    next_trial = 0

    def begin(b):
        nonlocal next_trial
        if next_trial >= ev.trials:
            trial_of[b] = -1
            return
        trial_of[b] = next_trial
        goal[b] = goals[next_trial]
        tracker.start(b, np.linalg.norm(goal[b] - ee_position(model, q[b])) < ev.success_radius)
        next_trial += 1

    for b in range(lanes):
        begin(b)
    state = RobotState(q, qd, np.zeros_like(q))
    while (trial_of >= 0).any():
        tau = ctrl(state, TaskTarget(goal.copy()))
        state = step(model, state, tau, sim)
        settled, timed_out = tracker.update(state.qdot)
        done = (settled | timed_out) & (trial_of >= 0)
        if done.any():
            ee = ee_position(model, state.q)
            for b in np.flatnonzero(done):
                err = float(np.linalg.norm(goal[b] - ee[b]))
                results[trial_of[b]] = Trial(bool(settled[b]), err, tracker.completion_time(b) if settled[b] else None)
                begin(b)
            ctrl.reset(np.flatnonzero(done))
    return results


def evaluate_single_controller(model: ArmModel, kind: str, q0, goal, sim: SimConfig, seconds: float,
                               gains: TaskGains | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop trajectory of one arm under an OSC law; returns ``(q, ee)`` per tick."""
    ctrl = OscVController(model, gains or OSC_V_GAINS, None, sim.dt) if kind == "osc-v" else OscAController(model, gains or OSC_A_GAINS, None, sim.dt)
    state = RobotState(np.asarray(q0, float), np.zeros(model.n), np.zeros(model.n))
    qs, ees = [], []
    for _ in range(int(round(seconds / sim.dt))):
        state = step(model, state, ctrl(state, TaskTarget(np.asarray(goal, float))), sim)
        qs.append(state.q)
        ees.append(ee_position(model, state.q))
    return np.array(qs), np.array(ees)


class SymmetryOffset:
    """Rotate goals about the base axis into the trained sector at evaluation time.

    Valid when joint 1 spins about ``axis`` through the origin. The policy sees
    the rotated goal error and a counter-rotated first joint; its joint velocity
    command is unchanged because rotating the whole arm commutes with joint 1.
    """

    def __init__(self, region: Region, n: int, axis=(0.0, 0.0, 1.0)):
        self.region = region
        self.n = n
        self.axis = np.asarray(axis, float) / np.linalg.norm(axis)

    def _angle(self, goal):
        heading = getattr(self.region, "heading", np.array([1.0, 0.0, 0.0]))
        e1 = heading - np.dot(heading, self.axis) * self.axis
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(self.axis, e1)
        return np.arctan2(goal @ e2, goal @ e1)

    def observe(self, obs, env: VecReachEnv):
        half = 0.5 * getattr(self.region, "sweep_angle", 2 * np.pi)
        phi = self._angle(env.goal)
        shift = np.where(np.abs(phi) > half, phi - np.clip(phi, -half, half), 0.0)
        out = obs.copy()
        c, s = np.cos(-shift), np.sin(-shift)
        k = self.axis
        dx = obs[:, :3]
        # Rodrigues rotation of the goal error by -shift about the base axis
        out[:, :3] = (dx * c[:, None] + np.cross(k, dx) * s[:, None] + np.outer(dx @ k, k) * (1 - c)[:, None])
        out[:, 3] = obs[:, 3] - shift
        return out
