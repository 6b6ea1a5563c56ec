"""Kinematics and rigid-body dynamics of revolute serial chains.

Every function accepts joint vectors of shape ``(n,)`` or ``(..., n)``; leading
dimensions are treated as a batch of independent configurations. The mass
matrix comes from a composite-rigid-body pass and the bias forces from a
recursive Newton-Euler pass, both written in world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BASE, ArmModel, EePose


def _mv(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (m @ v[..., None])[..., 0]


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def axis_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit axis for a batch of angles."""
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass
class Frames:
    """World placement of every link frame for one (batched) configuration."""

    rot: np.ndarray  # (..., n, 3, 3)
    pos: np.ndarray  # (..., n, 3) joint origins
    axis: np.ndarray  # (..., n, 3) world joint axes
    ee: np.ndarray  # (..., 3)

    @property
    def transforms(self) -> np.ndarray:
        """Homogeneous 4x4 link transforms, shape ``(..., n, 4, 4)``."""
        shape = self.rot.shape[:-2]
        t = np.zeros(shape + (4, 4))
        t[..., :3, :3] = self.rot
        t[..., :3, 3] = self.pos
        t[..., 3, 3] = 1.0
        return t


def link_frames(model: ArmModel, q) -> Frames:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.n:
        raise ValueError(f"expected {model.n} joint values, got shape {q.shape}")
    batch = q.shape[:-1]
    rot = np.empty(batch + (model.n, 3, 3))
    pos = np.empty(batch + (model.n, 3))
    axis = np.empty(batch + (model.n, 3))
    r_parent = np.broadcast_to(np.eye(3), batch + (3, 3))
    p_parent = np.zeros(batch + (3,))
    for i in range(model.n):
        pos[..., i, :] = p_parent + _mv(r_parent, model.origin_xyz[i])
        r_joint = r_parent @ model.origin_rot[i]
        axis[..., i, :] = _mv(r_joint, model.axis[i])
        rot[..., i, :, :] = r_joint @ axis_rotation(model.axis[i], q[..., i])
        r_parent, p_parent = rot[..., i, :, :], pos[..., i, :]
    ee = pos[..., model.ee_link, :] + _mv(rot[..., model.ee_link, :, :], model.ee_offset)
    return Frames(rot, pos, axis, ee)


def forward_kinematics(model: ArmModel, q, qdot=None) -> tuple[EePose, Frames]:
    """End-effector pose (and velocity when ``qdot`` is given) plus all link frames."""
    frames = link_frames(model, q)
    if qdot is None:
        vel = np.zeros_like(frames.ee)
    else:
        vel = _mv(_jacobian_from_frames(model, frames), np.asarray(qdot, dtype=float))
    return EePose(frames.ee, vel), frames


def ee_position(model: ArmModel, q) -> np.ndarray:
    return link_frames(model, q).ee


def _jacobian_from_frames(model: ArmModel, frames: Frames) -> np.ndarray:
    lever = frames.ee[..., None, :] - frames.pos
    cols = cross(frames.axis, lever)
    cols[..., model.ee_link + 1 :, :] = 0.0
    return np.swapaxes(cols, -1, -2)


def jacobian(model: ArmModel, q) -> np.ndarray:
    """Positional end-effector Jacobian, shape ``(..., 3, n)``."""
    return _jacobian_from_frames(model, link_frames(model, q))


def _mass_properties(model: ArmModel, frames: Frames):
    com = frames.pos + _mv(frames.rot, model.com)
    inertia = frames.rot @ model.inertia @ np.swapaxes(frames.rot, -1, -2)
    return com, inertia


def mass_matrix(model: ArmModel, q) -> np.ndarray:
    """Joint-space inertia matrix via composite rigid bodies, shape ``(..., n, n)``."""
    frames = link_frames(model, q)
    com, inertia = _mass_properties(model, frames)
    n = model.n
    batch = frames.ee.shape[:-1]
    eye = np.eye(3)

    # composite body j..n-1: mass, centre of mass, inertia about that centre
    c_mass = np.empty(n)
    c_com = np.empty(batch + (n, 3))
    c_inertia = np.empty(batch + (n, 3, 3))
    acc_m, acc_mc = 0.0, np.zeros(batch + (3,))
    for j in range(n - 1, -1, -1):
        acc_m += model.mass[j]
        acc_mc = acc_mc + model.mass[j] * com[..., j, :]
        c_mass[j] = acc_m
        c_com[..., j, :] = acc_mc / acc_m
    for j in range(n):
        total = np.zeros(batch + (3, 3))
        for k in range(j, n):
            r = com[..., k, :] - c_com[..., j, :]
            rr = np.sum(r * r, axis=-1)[..., None, None]
            total = total + inertia[..., k, :, :] + model.mass[k] * (rr * eye - r[..., :, None] * r[..., None, :])
        c_inertia[..., j, :, :] = total

    m = np.empty(batch + (n, n))
    for j in range(n):
        z_j = frames.axis[..., j, :]
        force = c_mass[j] * cross(z_j, c_com[..., j, :] - frames.pos[..., j, :])
        moment_com = _mv(c_inertia[..., j, :, :], z_j)
        for i in range(j + 1):
            moment = moment_com + cross(c_com[..., j, :] - frames.pos[..., i, :], force)
            m[..., i, j] = m[..., j, i] = np.sum(frames.axis[..., i, :] * moment, axis=-1)
    return m


def inverse_dynamics(model: ArmModel, q, qdot, qddot, gravity=None) -> np.ndarray:
    """Recursive Newton-Euler: joint torques producing ``qddot`` at state ``(q, qdot)``."""
    frames = link_frames(model, q)
    return _rnea(model, frames, np.asarray(qdot, float), np.asarray(qddot, float),
                 model.gravity if gravity is None else np.asarray(gravity, float))


def _rnea(model: ArmModel, frames: Frames, qdot, qddot, gravity) -> np.ndarray:
    n = model.n
    com, inertia = _mass_properties(model, frames)
    batch = frames.ee.shape[:-1]
    qdot = np.broadcast_to(qdot, batch + (n,))
    qddot = np.broadcast_to(qddot, batch + (n,))
    w = np.zeros(batch + (3,))
    dw = np.zeros(batch + (3,))
    acc = np.broadcast_to(-gravity, batch + (3,))
    p_prev = np.zeros(batch + (3,))
    forces, moments, levers = [], [], []
    for i in range(n):
        z = frames.axis[..., i, :]
        r = frames.pos[..., i, :] - p_prev
        acc = acc + cross(dw, r) + cross(w, cross(w, r))
        spin = z * qdot[..., i, None]
        dw = dw + z * qddot[..., i, None] + cross(w, spin)
        w = w + spin
        rc = com[..., i, :] - frames.pos[..., i, :]
        acc_com = acc + cross(dw, rc) + cross(w, cross(w, rc))
        forces.append(model.mass[i] * acc_com)
        moments.append(_mv(inertia[..., i, :, :], dw) + cross(w, _mv(inertia[..., i, :, :], w)))
        levers.append(rc)
        p_prev = frames.pos[..., i, :]

    tau = np.empty(batch + (n,))
    f_next = np.zeros(batch + (3,))
    n_next = np.zeros(batch + (3,))
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            arm = frames.pos[..., i + 1, :] - frames.pos[..., i, :]
            n_next = n_next + cross(arm, f_next)
        n_i = moments[i] + cross(levers[i], forces[i]) + n_next
        f_next = forces[i] + f_next
        n_next = n_i
        tau[..., i] = np.sum(frames.axis[..., i, :] * n_i, axis=-1)
    return tau


def bias_forces(model: ArmModel, q, qdot) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(C(q, qdot) qdot, g(q))`` as separate joint-torque vectors."""
    frames = link_frames(model, q)
    qdot = np.asarray(qdot, dtype=float)
    zero = np.zeros(model.n)
    coriolis = _rnea(model, frames, qdot, zero, np.zeros(3))
    grav = _rnea(model, frames, zero, zero, model.gravity)
    return coriolis, grav


def combined_bias(model: ArmModel, q, qdot) -> np.ndarray:
    """``C(q, qdot) qdot + g(q)`` in a single Newton-Euler pass."""
    frames = link_frames(model, q)
    return _rnea(model, frames, np.asarray(qdot, float), np.zeros(model.n), model.gravity)


def link_sphere_centers(model: ArmModel, q, frames: Frames | None = None):
    """World centres of the collision spheres.

    Returns ``(links, centers, radii)`` with ``centers`` of shape ``(..., s, 3)``.
    Spheres attached to the base (link index ``-1``) stay at their offset.
    """
    if frames is None:
        frames = link_frames(model, q)
    batch = frames.ee.shape[:-1]
    links = model.sphere_links
    offsets = model.sphere_offsets
    centers = np.empty(batch + (len(links), 3))
    for k, (link, off) in enumerate(zip(links, offsets)):
        if link == BASE:
            centers[..., k, :] = off
        else:
            centers[..., k, :] = frames.pos[..., link, :] + _mv(frames.rot[..., link, :, :], off)
    return links, centers, model.sphere_radii


def kinetic_energy(model: ArmModel, q, qdot) -> np.ndarray:
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", qdot, mass_matrix(model, q), qdot)
