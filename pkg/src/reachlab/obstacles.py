"""Link-to-obstacle distance vectors, proximity penalties and grazing diagnostics.

Each link is represented by its collision spheres. For a link sphere with
centre ``c`` and radius ``r`` the distance vector to an obstacle is
``d = separation * u`` where ``u`` is the unit direction from the link surface
point towards the obstacle surface point. When the two overlap the separation
is negative and ``d`` points along the obstacle's outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .model import FORMAT_HEADER, ModelError, _check_header

FAR_DISTANCE = 1.0
FAR_DIRECTION = np.array([0.0, 0.0, 1.0])
TIE_AXIS = np.array([1.0, 0.0, 0.0])
RATIO_CAP = 100.0


@dataclass
class ObstacleSet:
    sphere_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sphere_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    box_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    box_half_extents: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    capsule_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    capsule_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    capsule_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.sphere_centers = np.asarray(self.sphere_centers, float).reshape(-1, 3)
        self.sphere_radii = np.asarray(self.sphere_radii, float).reshape(-1)
        self.box_centers = np.asarray(self.box_centers, float).reshape(-1, 3)
        self.box_half_extents = np.asarray(self.box_half_extents, float).reshape(-1, 3)
        self.capsule_a = np.asarray(self.capsule_a, float).reshape(-1, 3)
        self.capsule_b = np.asarray(self.capsule_b, float).reshape(-1, 3)
        self.capsule_radii = np.asarray(self.capsule_radii, float).reshape(-1)
        if np.any(self.sphere_radii <= 0) or np.any(self.capsule_radii <= 0):
            raise ValueError("obstacle radii must be positive")
        if np.any(self.box_half_extents <= 0):
            raise ValueError("box half-extents must be positive")

    @classmethod
    def spheres(cls, centers, radii) -> "ObstacleSet":
        centers = np.asarray(centers, float).reshape(-1, 3)
        return cls(centers, np.broadcast_to(np.asarray(radii, float), (len(centers),)).copy())

    def __len__(self) -> int:
        return len(self.sphere_radii) + len(self.box_centers) + len(self.capsule_radii)

    def translated(self, offset) -> "ObstacleSet":
        offset = np.asarray(offset, float)
        return ObstacleSet(self.sphere_centers + offset, self.sphere_radii, self.box_centers + offset,
                           self.box_half_extents, self.capsule_a + offset, self.capsule_b + offset, self.capsule_radii)

    def signed_distance(self, points: np.ndarray):
        """Signed distance from ``points`` (..., 3) to every obstacle surface.

        Returns ``(distance, normal)`` of shapes ``(..., k)`` and ``(..., k, 3)``
        with obstacles ordered spheres, boxes, capsules and ``normal`` the
        outward surface normal at the closest surface point.
        """
        points = np.asarray(points, float)
        parts_d, parts_n = [], []
        if len(self.sphere_radii):
            v = points[..., None, :] - self.sphere_centers
            dist = np.linalg.norm(v, axis=-1)
            parts_d.append(dist - self.sphere_radii)
            parts_n.append(_unit(v, dist))
        if len(self.box_centers):
            rel = points[..., None, :] - self.box_centers
            excess = np.abs(rel) - self.box_half_extents
            outside = np.linalg.norm(np.maximum(excess, 0.0), axis=-1)
            inside = np.minimum(excess.max(axis=-1), 0.0)
            nearest = np.clip(rel, -self.box_half_extents, self.box_half_extents)
            out_dir = rel - nearest
            face = np.argmax(excess, axis=-1)
            in_dir = np.zeros_like(rel)
            np.put_along_axis(in_dir, face[..., None], np.sign(np.take_along_axis(rel, face[..., None], -1)) + 0.0, -1)
            in_dir[np.all(in_dir == 0, axis=-1)] = -TIE_AXIS
            normal = np.where((outside > 0)[..., None], _unit(out_dir, outside), in_dir)
            parts_d.append(outside + inside)
            parts_n.append(normal)
        if len(self.capsule_radii):
            ab = self.capsule_b - self.capsule_a
            ap = points[..., None, :] - self.capsule_a
            denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
            t = np.clip(np.sum(ap * ab, axis=-1) / denom, 0.0, 1.0)
            v = ap - t[..., None] * ab
            dist = np.linalg.norm(v, axis=-1)
            parts_d.append(dist - self.capsule_radii)
            parts_n.append(_unit(v, dist))
        if not parts_d:
            shape = points.shape[:-1]
            return np.zeros(shape + (0,)), np.zeros(shape + (0, 3))
        return np.concatenate(parts_d, axis=-1), np.concatenate(parts_n, axis=-2)


def _unit(v: np.ndarray, norm: np.ndarray) -> np.ndarray:
    """Normalise, mapping degenerate (zero-length) vectors to ``-TIE_AXIS``.

    Outward normals feed ``u = -normal``, so the tie-break direction of the
    distance vector is ``+x``.
    """
    safe = norm > 1e-12
    out = np.where(safe[..., None], v / np.where(safe, norm, 1.0)[..., None], -TIE_AXIS)
    return out


@dataclass
class DistanceVectors:
    """Per-link closest-obstacle data, batched over leading dimensions."""

    vectors: np.ndarray  # (..., n, 3)
    separation: np.ndarray  # (..., n)
    obstacle: np.ndarray  # (..., n) int, -1 for the far sentinel
    sphere: np.ndarray  # (..., n) int index of the closest link sphere, -1 if none
    min_separation: np.ndarray  # (...,) over every sphere including base spheres


def closest_points(link_spheres, obstacles: ObstacleSet, n_links: int, far: float = FAR_DISTANCE) -> DistanceVectors:
    """Reduce sphere-to-obstacle distances to one vector per link.

    ``link_spheres`` is the ``(links, centers, radii)`` triple returned by
    :func:`reachlab.dynamics.link_sphere_centers`. Links whose nearest obstacle
    is farther than ``far`` (or with no obstacles at all) receive the sentinel
    ``far * +z``.
    """
    links, centers, radii = link_spheres
    centers = np.asarray(centers, float)
    batch = centers.shape[:-2]
    sd, normal = obstacles.signed_distance(centers)  # (..., s, k)
    sep = sd - np.asarray(radii)[:, None]
    return _reduce(np.asarray(links), sep, -normal, n_links, far, batch)


def _reduce(links, sep, direction, n_links, far, batch) -> DistanceVectors:
    vectors = np.broadcast_to(far * FAR_DIRECTION, batch + (n_links, 3)).copy()
    separation = np.full(batch + (n_links,), far)
    obstacle = np.full(batch + (n_links,), -1)
    sphere = np.full(batch + (n_links,), -1)
    k = sep.shape[-1]
    min_sep = sep.min(axis=(-2, -1)) if k and sep.shape[-2] else np.full(batch, np.inf)
    if k == 0:
        return DistanceVectors(vectors, separation, obstacle, sphere, min_sep)
    for i in range(n_links):
        idx = np.flatnonzero(links == i)
        if idx.size == 0:
            continue
        # spheres of this link in order, obstacles in order; argmin keeps the first tie
        block = sep[..., idx, :].reshape(batch + (-1,))
        flat = np.argmin(block, axis=-1)
        best = np.take_along_axis(block, flat[..., None], -1)[..., 0]
        s_local, o = np.divmod(flat, k)
        s_idx = idx[s_local]
        u = np.take_along_axis(direction, s_idx[..., None, None, None], axis=-3)[..., 0, :, :]
        u = np.take_along_axis(u, o[..., None, None], axis=-2)[..., 0, :]
        near = best <= far
        vectors[..., i, :] = np.where(near[..., None], np.where(near, best, 0.0)[..., None] * u, vectors[..., i, :])
        separation[..., i] = np.where(near, best, far)
        obstacle[..., i] = np.where(near, o, -1)
        sphere[..., i] = np.where(near, s_idx, -1)
    return DistanceVectors(vectors, separation, obstacle, sphere, min_sep)


def sphere_distances(links, centers, radii, obs_centers, obs_radii, obs_valid, n_links, far=FAR_DISTANCE) -> DistanceVectors:
    """Batched variant for per-lane sphere-only scenes.

    ``centers`` is ``(B, s, 3)``; each lane ``b`` has up to ``K`` obstacle
    spheres ``obs_centers[b]`` with ``obs_valid[b]`` marking the real ones.
    """
    v = centers[:, :, None, :] - obs_centers[:, None, :, :]
    dist = np.linalg.norm(v, axis=-1)
    sep = dist - obs_radii[:, None, :] - np.asarray(radii)[None, :, None]
    sep = np.where(obs_valid[:, None, :], sep, np.inf)
    direction = -_unit(v, dist)
    return _reduce(np.asarray(links), sep, direction, n_links, far, centers.shape[:1])


def obstacle_penalty(d: DistanceVectors, d_max: float = 0.05):
    """psi_i = max(0, 1 - max(separation_i, 0) / d_max); returns ``(psi, psi.sum(-1))``."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    gap = np.maximum(d.separation, 0.0)
    psi = np.maximum(0.0, 1.0 - gap / d_max)
    return psi, psi.sum(axis=-1)


def grazing_ratio(normal_dir, velocity, cap: float = RATIO_CAP):
    """Normal-to-tangential speed ratio of a link point relative to an obstacle.

    Returns ``None`` when the point is not moving at all; a purely normal
    approach is reported as ``cap``.
    """
    normal_dir = np.asarray(normal_dir, float)
    velocity = np.asarray(velocity, float)
    u = normal_dir / np.linalg.norm(normal_dir)
    vn = float(np.dot(velocity, u))
    vt = float(np.linalg.norm(velocity - vn * u))
    if abs(vn) < 1e-6 and vt < 1e-6:
        return None
    if vt < 1e-6:
        return cap
    return min(abs(vn) / vt, cap)


def touch_events(separations, directions, velocities, cap: float = RATIO_CAP) -> list[float]:
    """Grazing ratios at every first-touch event of a trajectory.

    ``separations`` is ``(T, L)``, ``directions`` and ``velocities`` ``(T, L, 3)``.
    A touch event is a tick where a link's separation drops to ``<= 0`` from
    a positive value (or starts non-positive at ``t = 0``).
    """
    sep = np.asarray(separations, float)
    ratios = []
    prev = np.full(sep.shape[1], np.inf)
    for t in range(sep.shape[0]):
        for link in np.flatnonzero((sep[t] <= 0) & (prev > 0)):
            r = grazing_ratio(directions[t, link], velocities[t, link], cap)
            if r is not None:
                ratios.append(r)
        prev = sep[t]
    return ratios


def parse_scene(text: str) -> ObstacleSet:
    """Read the ``scene`` section of a reachlab document."""
    _check_header(text)
    doc = yaml.safe_load(text) or {}
    scene = doc.get("scene") or {}
    try:
        spheres = scene.get("spheres") or []
        boxes = scene.get("boxes") or []
        capsules = scene.get("capsules") or []
        return ObstacleSet(
            [s["center"] for s in spheres], [s["radius"] for s in spheres],
            [b["center"] for b in boxes], [b["half_extents"] for b in boxes],
            [c["a"] for c in capsules], [c["b"] for c in capsules], [c["radius"] for c in capsules],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"bad scene section: {exc}") from exc


def load_scene(path: str | Path) -> ObstacleSet:
    return parse_scene(Path(path).read_text())


def scene_document(obstacles: ObstacleSet) -> str:
    scene = {
        "spheres": [{"center": c.tolist(), "radius": float(r)} for c, r in zip(obstacles.sphere_centers, obstacles.sphere_radii)],
        "boxes": [{"center": c.tolist(), "half_extents": h.tolist()} for c, h in zip(obstacles.box_centers, obstacles.box_half_extents)],
        "capsules": [{"a": a.tolist(), "b": b.tolist(), "radius": float(r)}
                     for a, b, r in zip(obstacles.capsule_a, obstacles.capsule_b, obstacles.capsule_radii)],
    }
    return f"format: {FORMAT_HEADER}\n" + yaml.safe_dump({"scene": scene}, sort_keys=False)
