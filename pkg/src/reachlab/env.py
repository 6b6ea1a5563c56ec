"""The reaching MDP: observations, reward, goal and obstacle sampling, episodes.

:class:`VecReachEnv` steps E independent arms in lock-step through the
compiled batch servo. :class:`ReachEnv` is the single-arm view of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fastsim import BatchServo
from .model import ArmModel
from .obstacles import ObstacleSet, obstacle_penalty, sphere_distances
from .regions import Region, SamplingError, sample_goal
from .sim import PDGains, SimConfig

MAX_OBSTACLES = 3


@dataclass
class RewardWeights:
    lambda_err: float = 20.0
    lambda_eff: float = 0.005
    lambda_obs: float = 0.1
    d_max: float = 0.05

    def __post_init__(self):
        if min(self.lambda_err, self.lambda_eff, self.lambda_obs, self.d_max) < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass
class EpisodeConfig:
    horizon_steps: int = 800
    abort_distance: float = 0.80
    home_pose: np.ndarray | None = None
    obstacle_count_range: tuple[int, int] = (1, 3)
    obstacle_radius: float = 0.08
    obstacle_clearance: float = 0.05
    action_scale: np.ndarray | float | None = None
    settle_velocity: float = 0.05

    def __post_init__(self):
        if self.horizon_steps <= 0:
            raise ValueError("horizon must be positive")
        if self.obstacle_clearance < 0:
            raise ValueError("obstacle clearance must be non-negative")


def reward(weights: RewardWeights, delta_x, qddot, psi_sum=0.0):
    """exp(-l_err |dx|^2) - l_eff |qddot| - l_obs sum(psi); batched over leading dims."""
    err2 = np.sum(np.square(delta_x), axis=-1)
    effort = np.linalg.norm(qddot, axis=-1)
    return np.exp(-weights.lambda_err * err2) - weights.lambda_eff * effort - weights.lambda_obs * np.asarray(psi_sum)


def observation_dim(n: int, with_obstacles: bool) -> int:
    return 3 + (5 * n if with_obstacles else 2 * n)


def place_obstacles(region: Region, start_ee, goal, count: int, rng: np.random.Generator,
                    radius: float = 0.08, clearance: float = 0.05, arm_spheres=None,
                    max_draws: int = 10_000) -> ObstacleSet:
    """Drop ``count`` spheres uniformly in the region, each at least ``clearance``
    (surface to point) from the start and goal end-effector positions.

    ``arm_spheres`` optionally gives ``(centers, radii)`` of the arm at the start
    pose; candidates overlapping it are also rejected.
    """
    if not 1 <= count <= MAX_OBSTACLES:
        raise ValueError(f"obstacle count must be in 1..{MAX_OBSTACLES}")
    start_ee, goal = np.asarray(start_ee, float), np.asarray(goal, float)
    centers = []
    draws = 0
    while len(centers) < count:
        if draws >= max_draws:
            raise SamplingError(f"could not place {count} obstacles with clearance {clearance} m")
        draws += 1
        c = sample_goal(region, rng)
        if np.linalg.norm(c - start_ee) - radius < clearance or np.linalg.norm(c - goal) - radius < clearance:
            continue
        if arm_spheres is not None:
            ac, ar = arm_spheres
            if np.any(np.linalg.norm(ac - c, axis=-1) - ar - radius <= 0):
                continue
        centers.append(c)
    return ObstacleSet.spheres(centers, radius)


@dataclass
class EpisodeRecord:
    episode: int
    lane: int
    start: list
    goal: list
    final_error_m: float
    settled: bool
    steps: int
    aborted: bool
    collisions: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: np.ndarray
    timeout: np.ndarray
    abort: np.ndarray
    final_obs: np.ndarray  # observation before auto-reset (equals obs for lanes that did not finish)
    records: list = field(default_factory=list)
    psi_sum: np.ndarray | None = None
    delta_x: np.ndarray | None = None
    qddot: np.ndarray | None = None

    @property
    def done(self) -> np.ndarray:
        return self.timeout | self.abort


class VecReachEnv:
    """E reaching arms advanced together; each lane auto-resets when its episode ends."""

    def __init__(self, model: ArmModel, num_envs: int, region: Region, episode: EpisodeConfig | None = None,
                 weights: RewardWeights | None = None, sim: SimConfig | None = None, gains: PDGains | None = None,
                 obstacles: bool = False, observe_obstacles: bool | None = None, seed: int | np.random.SeedSequence = 0,
                 auto_reset: bool = True):
        self.model = model
        self.num_envs = num_envs
        self.region = region
        self.episode = episode or EpisodeConfig()
        self.weights = weights or RewardWeights()
        self.sim = sim or SimConfig()
        self.gains = gains or PDGains()
        self.obstacles = obstacles
        self.observe_obstacles = obstacles if observe_obstacles is None else observe_obstacles
        self.auto_reset = auto_reset
        self.rng = np.random.default_rng(seed)
        self.servo = BatchServo(model, self.gains, self.sim)
        n, e = model.n, num_envs
        scale = self.episode.action_scale
        self.action_scale = model.qdot_limit.copy() if scale is None else np.broadcast_to(np.asarray(scale, float), (n,)).copy()
        self.home = model.home_pose.copy() if self.episode.home_pose is None else np.asarray(self.episode.home_pose, float)
        self.q = np.tile(self.home, (e, 1))
        self.qd = np.zeros((e, n))
        self.qdd = np.zeros((e, n))
        self.q_d = self.q.copy()
        self.qd_d = np.zeros((e, n))
        self.goal = np.zeros((e, 3))
        self.start = np.zeros((e, 3))
        self.t = np.zeros(e, dtype=int)
        self.init_err = np.zeros(e)
        self.need_home = np.ones(e, dtype=bool)
        self.collisions = np.zeros(e, dtype=int)
        self.in_contact = np.zeros(e, dtype=bool)
        self.obs_c = np.zeros((e, MAX_OBSTACLES, 3))
        self.obs_r = np.ones((e, MAX_OBSTACLES))
        self.obs_valid = np.zeros((e, MAX_OBSTACLES), dtype=bool)
        self.episodes_done = 0
        self.ee, self.centers = self.servo.positions(self.q)
        self.distances = None

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.model.n, self.observe_obstacles)

    def set_region(self, region: Region) -> None:
        self.region = region

    def scene(self, lane: int) -> ObstacleSet:
        valid = self.obs_valid[lane]
        return ObstacleSet.spheres(self.obs_c[lane][valid], self.obs_r[lane][valid])

    def reset_lane(self, b: int, goal=None, scene: ObstacleSet | None = None) -> None:
        """Start a new episode in lane ``b``; the arm carries over unless the last episode aborted."""
        if self.need_home[b]:
            self.q[b] = self.home
            self.qd[b] = 0.0
            self.need_home[b] = False
        self.qdd[b] = 0.0
        self.q_d[b] = self.q[b]
        self.qd_d[b] = 0.0
        ee, centers = self.servo.positions(self.q[b : b + 1])
        self.start[b] = ee[0]
        self.goal[b] = sample_goal(self.region, self.rng) if goal is None else goal
        self.obs_valid[b] = False
        if scene is not None:
            k = len(scene.sphere_radii)
            self.obs_c[b, :k] = scene.sphere_centers
            self.obs_r[b, :k] = scene.sphere_radii
            self.obs_valid[b, :k] = True
        elif self.obstacles:
            lo, hi = self.episode.obstacle_count_range
            count = int(self.rng.integers(lo, hi + 1))
            placed = place_obstacles(self.region, self.start[b], self.goal[b], count, self.rng,
                                     self.episode.obstacle_radius, self.episode.obstacle_clearance,
                                     (centers[0], self.model.sphere_radii))
            self.obs_c[b, :count] = placed.sphere_centers
            self.obs_r[b, :count] = placed.sphere_radii
            self.obs_valid[b, :count] = True
        self.t[b] = 0
        self.init_err[b] = np.linalg.norm(self.goal[b] - ee[0])
        self.collisions[b] = 0
        self.in_contact[b] = False

    def reset(self) -> np.ndarray:
        for b in range(self.num_envs):
            self.reset_lane(b)
        self._refresh()
        return self.observe()

    def _refresh(self) -> None:
        self.ee, self.centers = self.servo.positions(self.q)
        if self.obs_valid.any() or self.observe_obstacles:
            self.distances = sphere_distances(self.model.sphere_links, self.centers, self.model.sphere_radii,
                                              self.obs_c, self.obs_r, self.obs_valid, self.model.n)
        else:
            self.distances = None

    def observe(self) -> np.ndarray:
        parts = [self.goal - self.ee, self.q, self.qd]
        if self.observe_obstacles:
            parts.append(self.distances.vectors.reshape(self.num_envs, -1))
        return np.concatenate(parts, axis=1)

    def psi(self) -> np.ndarray:
        if self.distances is None:
            return np.zeros(self.num_envs)
        return obstacle_penalty(self.distances, self.weights.d_max)[1]

    def step(self, actions) -> StepResult:
        a = np.clip(np.asarray(actions, float), -self.action_scale, self.action_scale)
        if self.sim.integration_mode == "accumulate":
            q_d = self.q_d + a * self.sim.dt
        else:
            q_d = self.q + self.sim.lambda1 * self.sim.dt * a
        self.q_d = np.clip(q_d, self.model.q_lower, self.model.q_upper)
        self.qd_d = a
        self.servo.tick(self.q, self.qd, self.q_d, self.qd_d, self.qdd)
        self._refresh()
        delta_x = self.goal - self.ee
        psi_sum = self.psi()
        r = reward(self.weights, delta_x, self.qdd, psi_sum)
        if self.distances is not None:
            contact = self.distances.min_separation <= 0
            self.collisions += contact & ~self.in_contact
            self.in_contact = contact
        self.t += 1
        err = np.linalg.norm(delta_x, axis=1)
        abort = err > np.maximum(self.episode.abort_distance, self.init_err)
        timeout = (self.t >= self.episode.horizon_steps) & ~abort
        obs = self.observe()
        final_obs = obs
        records = []
        done = abort | timeout
        if done.any():
            final_obs = obs.copy()
            for b in np.flatnonzero(done):
                records.append(EpisodeRecord(
                    self.episodes_done, int(b), self.start[b].tolist(), self.goal[b].tolist(), float(err[b]),
                    bool(np.max(np.abs(self.qd[b])) < self.episode.settle_velocity), int(self.t[b]),
                    bool(abort[b]), int(self.collisions[b])))
                self.episodes_done += 1
                self.need_home[b] = bool(abort[b])
                if self.auto_reset:
                    self.reset_lane(b)
            if self.auto_reset:
                self._refresh()
                obs = self.observe()
        return StepResult(obs, r, timeout, abort, final_obs, records, psi_sum, delta_x, self.qdd.copy())


class ReachEnv:
    """Single-arm reaching environment (a one-lane :class:`VecReachEnv`)."""

    def __init__(self, model: ArmModel, region: Region, **kwargs):
        kwargs.setdefault("auto_reset", False)
        self.vec = VecReachEnv(model, 1, region, **kwargs)

    @property
    def q(self):
        return self.vec.q[0]

    @property
    def qdot(self):
        return self.vec.qd[0]

    @property
    def goal(self):
        return self.vec.goal[0]

    @property
    def ee(self):
        return self.vec.ee[0]

    def reset(self, region: Region | None = None, goal=None) -> np.ndarray:
        if region is not None:
            self.vec.set_region(region)
        self.vec.reset_lane(0, goal=goal)
        self.vec._refresh()
        return self.vec.observe()[0]

    def step(self, action):
        res = self.vec.step(np.asarray(action, float)[None, :])
        flags = {"timeout": bool(res.timeout[0]), "abort": bool(res.abort[0])}
        return res.obs[0], float(res.reward[0]), flags


def reset(env: ReachEnv, region: Region, rng: np.random.Generator | None = None) -> np.ndarray:
    if rng is not None:
        env.vec.rng = rng
    return env.reset(region)


def step_env(env: ReachEnv, action):
    return env.step(action)
