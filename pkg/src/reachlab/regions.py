"""Goal regions and the curriculum over nested regions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DRAWS = 100_000


class SamplingError(RuntimeError):
    pass


def _frame(axis, heading):
    """Orthonormal (e1, e2, axis) with e1 the projection of ``heading`` onto the plane."""
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    e1 = np.asarray(heading, float) - np.dot(heading, axis) * axis
    if np.linalg.norm(e1) < 1e-9:
        e1 = np.cross(axis, [0.0, 1.0, 0.0] if abs(axis[1]) < 0.9 else [1.0, 0.0, 0.0])
    e1 = e1 / np.linalg.norm(e1)
    return np.stack([e1, np.cross(axis, e1), axis])


@dataclass
class _Revolved:
    """Shared machinery for regions swept about an axis through ``center``."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    heading: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def _local(self, points):
        rot = _frame(self.axis, self.heading)
        rel = np.asarray(points, float) - np.asarray(self.center, float)
        return rel @ rot.T  # (..., 3) in (e1, e2, axis)

    def _world(self, local):
        rot = _frame(self.axis, self.heading)
        return np.asarray(self.center, float) + local @ rot

    def _in_sweep(self, local):
        azimuth = np.arctan2(local[..., 1], local[..., 0])
        return np.abs(azimuth) <= 0.5 * self.sweep_angle + 1e-12


@dataclass
class PartialTorus(_Revolved):
    """Solid torus sector centred on ``heading``; the sweep is split evenly either side."""

    major_radius: float = 0.45
    minor_radius: float = 0.30
    sweep_angle: float = 2 * np.pi

    def __post_init__(self):
        if self.major_radius <= 0 or self.minor_radius <= 0:
            raise ValueError("torus radii must be positive")
        if not 0 < self.sweep_angle <= 2 * np.pi + 1e-12:
            raise ValueError("sweep angle must lie in (0, 2 pi]")

    def contains(self, points) -> np.ndarray:
        local = self._local(points)
        rho = np.hypot(local[..., 0], local[..., 1])
        tube = np.hypot(rho - self.major_radius, local[..., 2])
        return (tube <= self.minor_radius + 1e-12) & self._in_sweep(local)

    def _bounds(self):
        outer = self.major_radius + self.minor_radius
        return np.array([-outer, -outer, -self.minor_radius]), np.array([outer, outer, self.minor_radius])

    @property
    def span(self) -> float:
        return 2.0 * (self.major_radius + self.minor_radius)


@dataclass
class AnnularSector(_Revolved):
    """Annulus sector (a flat ring slab when ``half_height`` is 0) for planar arms."""

    inner_radius: float = 0.4
    outer_radius: float = 1.6
    sweep_angle: float = 2 * np.pi
    half_height: float = 0.0

    def __post_init__(self):
        if not 0 <= self.inner_radius < self.outer_radius or self.half_height < 0:
            raise ValueError("need 0 <= inner radius < outer radius and half_height >= 0")
        if not 0 < self.sweep_angle <= 2 * np.pi + 1e-12:
            raise ValueError("sweep angle must lie in (0, 2 pi]")

    def contains(self, points) -> np.ndarray:
        local = self._local(points)
        rho = np.hypot(local[..., 0], local[..., 1])
        return ((rho >= self.inner_radius - 1e-12) & (rho <= self.outer_radius + 1e-12)
                & (np.abs(local[..., 2]) <= self.half_height + 1e-12) & self._in_sweep(local))

    def _bounds(self):
        o = self.outer_radius
        return np.array([-o, -o, -self.half_height]), np.array([o, o, self.half_height])

    @property
    def span(self) -> float:
        return 2.0 * self.outer_radius


@dataclass
class BoxRegion:
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    extents: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.4, 0.3]))

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.extents = np.asarray(self.extents, float)
        if np.any(self.extents <= 0):
            raise ValueError("box extents must be positive")

    def contains(self, points) -> np.ndarray:
        rel = np.abs(np.asarray(points, float) - self.center)
        return np.all(rel <= 0.5 * self.extents + 1e-12, axis=-1)

    def _local(self, points):
        return np.asarray(points, float) - self.center

    def _world(self, local):
        return self.center + local

    def _bounds(self):
        return -0.5 * self.extents, 0.5 * self.extents

    @property
    def span(self) -> float:
        return float(np.linalg.norm(self.extents))


Region = PartialTorus | AnnularSector | BoxRegion


def region_contains(region: Region, point) -> bool | np.ndarray:
    return region.contains(point)


def sample_goal(region: Region, rng: np.random.Generator, max_draws: int = MAX_DRAWS) -> np.ndarray:
    """Uniform sample from the region by rejection from its local bounding box."""
    lo, hi = region._bounds()
    draws = 0
    while draws < max_draws:
        batch = min(64, max_draws - draws)
        local = rng.uniform(lo, hi, size=(batch, 3))
        draws += batch
        world = region._world(local)
        ok = np.flatnonzero(region.contains(world))
        if ok.size:
            return world[ok[0]]
    raise SamplingError(f"no point accepted after {max_draws} draws")


def region_from_dict(spec: dict) -> Region:
    spec = dict(spec)
    shape = spec.pop("shape")
    for key in ("sweep_deg",):
        if key in spec:
            spec["sweep_angle"] = np.deg2rad(spec.pop(key))
    for key in ("center", "axis", "heading", "extents"):
        if key in spec:
            spec[key] = np.asarray(spec[key], float)
    if shape == "partial_torus":
        return PartialTorus(**spec)
    if shape == "annular_sector":
        return AnnularSector(**spec)
    if shape == "box":
        return BoxRegion(**spec)
    raise ValueError(f"unknown region shape {shape!r}")


@dataclass
class CurriculumSchedule:
    """Nested regions R_1 within ... within R_k and the advancement threshold (m)."""

    regions: list
    threshold: float = 0.01
    eval_cadence: int = 10
    window: int = 50

    def __post_init__(self):
        if not self.regions:
            raise ValueError("a curriculum needs at least one region")

    @property
    def k(self) -> int:
        return len(self.regions)


def advance_curriculum(schedule: CurriculumSchedule, avg_error: float, current_index: int) -> int:
    """Move to the next region once the measured average error beats the threshold.

    ``current_index`` is zero-based; the last region is terminal.
    """
    if not 0 <= current_index < schedule.k:
        raise ValueError(f"region index {current_index} outside [0, {schedule.k})")
    if avg_error < schedule.threshold and current_index < schedule.k - 1:
        return current_index + 1
    return current_index


def check_nesting(schedule: CurriculumSchedule, rng: np.random.Generator, samples: int = 10_000) -> bool:
    """Sample each region and confirm every point lies in the next one."""
    for inner, outer in zip(schedule.regions, schedule.regions[1:]):
        pts = np.array([sample_goal(inner, rng) for _ in range(samples)])
        if not np.all(outer.contains(pts)):
            return False
    return True
