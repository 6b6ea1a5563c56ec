"""Run configuration files.

A run config is a YAML document with the sections ``model``, ``seed``,
``sim``, ``env``, ``reward``, ``curriculum``, ``ppo``, ``train`` and ``eval``
(all optional except ``curriculum.regions``). Unknown keys and wrong types are
reported with the line they appear on. ``docs/config.md`` lists every field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .env import EpisodeConfig, RewardWeights
from .model import ArmModel, load_model
from .ppo import PpoConfig
from .regions import CurriculumSchedule, region_from_dict
from .sim import PDGains, SimConfig


class ConfigError(ValueError):
    pass


@dataclass
class ObstacleConfig:
    enabled: bool = False
    count: tuple[int, int] = (1, 3)
    radius: float = 0.08
    clearance: float = 0.05


@dataclass
class TrainConfig:
    updates: int = 1000
    max_minutes: float | None = None
    transfer_from: str | None = None
    eval_episodes: int = 50
    checkpoint_every: int = 0


@dataclass
class EvalConfig:
    trials: int = 350
    success_radius: float = 0.01
    horizon_s: float = 30.0
    settle_velocity: float = 0.05
    settle_window_s: float = 0.5
    lanes: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.trials < 0:
            raise ValueError("trials must be non-negative")


@dataclass
class RunConfig:
    model: ArmModel
    model_name: str
    schedule: CurriculumSchedule
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    gains: PDGains = field(default_factory=PDGains)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    obstacles: ObstacleConfig = field(default_factory=ObstacleConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source: str = "<config>"

    def episode_config(self) -> EpisodeConfig:
        return dataclasses.replace(self.episode, obstacle_count_range=tuple(self.obstacles.count),
                                   obstacle_radius=self.obstacles.radius, obstacle_clearance=self.obstacles.clearance)

    def with_regions(self, regions) -> "RunConfig":
        return dataclasses.replace(self, schedule=dataclasses.replace(self.schedule, regions=list(regions)))


def _plain(node, path, marks):
    """Convert a composed YAML node to Python data, remembering each key's line."""
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {key!r}")
            out[key] = _plain(v, path + (key,), marks)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), marks) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


_SECTIONS = {
    "sim": ("dt", "substeps", "integration_mode", "lambda1", "servo", "kp", "kd"),
    "env": ("horizon_steps", "abort_distance", "home_pose", "action_scale", "settle_velocity"),
    "reward": ("lambda_err", "lambda_eff", "lambda_obs", "d_max"),
    "obstacles": ("enabled", "count", "radius", "clearance"),
    "curriculum": ("regions", "threshold", "eval_cadence", "window"),
    "ppo": tuple(f.name for f in dataclasses.fields(PpoConfig)),
    "train": tuple(f.name for f in dataclasses.fields(TrainConfig)),
    "eval": tuple(f.name for f in dataclasses.fields(EvalConfig)),
}


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    marks: dict = {}
    doc = _plain(root, (), marks) if root is not None else {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")

    def where(*path):
        for cut in range(len(path), -1, -1):
            if path[:cut] in marks:
                return f"{source}:{marks[path[:cut]]}"
        return source

    allowed = {"model", "seed", *_SECTIONS}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{where(key)}: unknown section {key!r}")
    sections = {}
    for name, keys in _SECTIONS.items():
        sec = doc.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"{where(name)}: section {name!r} must be a mapping")
        for key in sec:
            if key not in keys:
                raise ConfigError(f"{where(name, key)}: unknown key {name}.{key}")
        sections[name] = sec

    def build(name, fn, **kw):
        try:
            return fn(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where(name)}: {name}: {exc}") from None

    model_name = str(doc.get("model", "planar2"))
    model_src = model_name
    if base_dir is not None and (base_dir / model_name).exists():
        model_src = str(base_dir / model_name)
    try:
        model = load_model(model_src)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{where('model')}: {exc}") from None

    sim_kw = dict(sections["sim"])
    gains = build("sim", PDGains, **{k: sim_kw.pop(k) for k in ("kp", "kd") if k in sim_kw})
    sim = build("sim", SimConfig, **sim_kw)
    env_kw = dict(sections["env"])
    for key in ("home_pose", "action_scale"):
        if env_kw.get(key) is not None:
            env_kw[key] = np.asarray(env_kw[key], float)
    episode = build("env", EpisodeConfig, **env_kw)
    weights = build("reward", RewardWeights, **sections["reward"])
    obs_kw = dict(sections["obstacles"])
    if "count" in obs_kw:
        c = obs_kw["count"]
        obs_kw["count"] = (int(c), int(c)) if isinstance(c, int) else tuple(int(v) for v in c)
    obstacles = build("obstacles", ObstacleConfig, **obs_kw)

    cur = dict(sections["curriculum"])
    raw_regions = cur.pop("regions", None)
    if not raw_regions or not isinstance(raw_regions, list):
        raise ConfigError(f"{where('curriculum')}: curriculum.regions must be a non-empty list")
    regions = []
    for i, spec in enumerate(raw_regions):
        try:
            regions.append(region_from_dict(spec))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"{where('curriculum', 'regions', i)}: region {i + 1}: {exc}") from None
    schedule = build("curriculum", CurriculumSchedule, regions=regions, **cur)
    ppo_kw = dict(sections["ppo"])
    for key in ("adam_betas", "hidden"):
        if key in ppo_kw:
            ppo_kw[key] = tuple(ppo_kw[key])
    ppo = build("ppo", PpoConfig, **ppo_kw)
    train = build("train", TrainConfig, **sections["train"])
    ev = build("eval", EvalConfig, **sections["eval"])
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{where('seed')}: seed must be a non-negative integer")
    return RunConfig(model, model_name, schedule, seed, sim, gains, episode, weights, obstacles, ppo, train, ev, source)


def load_config(source: str | Path) -> RunConfig:
    """Load a run config from a path or the name of a bundled config (e.g. ``planar2-reach``)."""
    path = Path(source)
    if path.is_file():
        return parse_config(path.read_text(), str(path), path.parent)
    bundled = resources.files("reachlab.configs").joinpath(f"{source}.yaml")
    if bundled.is_file():
        return parse_config(bundled.read_text(), f"{source}.yaml")
    raise ConfigError(f"config file {str(source)!r} not found")
