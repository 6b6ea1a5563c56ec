"""Compiled batch servo for rollouts.

``servo_ticks`` advances E independent arms by one control tick each, with the
PD servo evaluated at every substep exactly as :func:`reachlab.sim.servo_step`
does. Because the servo cancels ``C qdot + g`` exactly, forward dynamics
reduces to ``M qddot = kp (q_d - q) + kd (qdot_d - qdot)``, so only the mass
matrix is needed here. The implicit servo adds ``h kd + h^2 kp`` to the
diagonal and evaluates the PD terms at the end of the substep.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .model import ArmModel
from .sim import PDGains, PhysicsFault, SimConfig


@njit(cache=True)
def _rot(axis, angle, out):
    x, y, z = axis[0], axis[1], axis[2]
    s, c = np.sin(angle), np.cos(angle)
    t = 1.0 - c
    out[0, 0] = c + x * x * t
    out[0, 1] = x * y * t - z * s
    out[0, 2] = x * z * t + y * s
    out[1, 0] = y * x * t + z * s
    out[1, 1] = c + y * y * t
    out[1, 2] = y * z * t - x * s
    out[2, 0] = z * x * t - y * s
    out[2, 1] = z * y * t + x * s
    out[2, 2] = c + z * z * t


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _mat3(a, b, out):
    for r in range(3):
        for c in range(3):
            out[r, c] = a[r, 0] * b[0, c] + a[r, 1] * b[1, c] + a[r, 2] * b[2, c]


@njit(cache=True)
def _vec3(a, v, out):
    for r in range(3):
        out[r] = a[r, 0] * v[0] + a[r, 1] * v[1] + a[r, 2] * v[2]


@njit(cache=True)
def _mass_matrix(q, origin_xyz, origin_rot, axis, mass, com, inertia, m_out, work_rot, work_pos, work_axis, work_com, work_in):
    n = q.shape[0]
    rj = np.empty((3, 3))
    rq = np.empty((3, 3))
    tmp3 = np.empty((3, 3))
    v3 = np.empty(3)
    for i in range(n):
        if i == 0:
            work_pos[0, :] = origin_xyz[0]
            rj[:, :] = origin_rot[0]
        else:
            _vec3(work_rot[i - 1], origin_xyz[i], v3)
            for a in range(3):
                work_pos[i, a] = work_pos[i - 1, a] + v3[a]
            _mat3(work_rot[i - 1], origin_rot[i], rj)
        _vec3(rj, axis[i], work_axis[i])
        _rot(axis[i], q[i], rq)
        _mat3(rj, rq, work_rot[i])
        _vec3(work_rot[i], com[i], v3)
        for a in range(3):
            work_com[i, a] = work_pos[i, a] + v3[a]
        _mat3(work_rot[i], inertia[i], tmp3)
        for r in range(3):
            for c in range(3):
                work_in[i, r, c] = tmp3[r, 0] * work_rot[i, c, 0] + tmp3[r, 1] * work_rot[i, c, 1] + tmp3[r, 2] * work_rot[i, c, 2]
    c_com = np.empty(3)
    c_in = np.empty((3, 3))
    force = np.empty(3)
    lever = np.empty(3)
    tmp = np.empty(3)
    base = np.empty(3)
    for j in range(n):
        cm = 0.0
        c_com[:] = 0.0
        for k in range(j, n):
            cm += mass[k]
            for a in range(3):
                c_com[a] += mass[k] * work_com[k, a]
        for a in range(3):
            c_com[a] /= cm
        c_in[:, :] = 0.0
        for k in range(j, n):
            r0 = work_com[k, 0] - c_com[0]
            r1 = work_com[k, 1] - c_com[1]
            r2 = work_com[k, 2] - c_com[2]
            lever[0], lever[1], lever[2] = r0, r1, r2
            rr = r0 * r0 + r1 * r1 + r2 * r2
            for a in range(3):
                for b in range(3):
                    c_in[a, b] += work_in[k, a, b] - mass[k] * lever[a] * lever[b]
                c_in[a, a] += mass[k] * rr
        for a in range(3):
            lever[a] = c_com[a] - work_pos[j, a]
        _cross(work_axis[j], lever, force)
        for a in range(3):
            force[a] *= cm
        _vec3(c_in, work_axis[j], base)
        for i in range(j + 1):
            for a in range(3):
                lever[a] = c_com[a] - work_pos[i, a]
            _cross(lever, force, tmp)
            v = 0.0
            for a in range(3):
                v += work_axis[i, a] * (base[a] + tmp[a])
            m_out[i, j] = v
            m_out[j, i] = v


@njit(cache=True)
def _chol_solve(m, rhs, out):
    """Cholesky solve; returns False if the matrix is not safely positive-definite."""
    n = m.shape[0]
    low = np.zeros((n, n))
    dmax = 0.0
    for i in range(n):
        if m[i, i] > dmax:
            dmax = m[i, i]
    for i in range(n):
        for j in range(i + 1):
            s = m[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            if i == j:
                # pivot ratio stands in for the condition-number test
                if not s > dmax * 1e-12:
                    return False
                low[i, i] = np.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    y = np.empty(n)
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= low[i, k] * y[k]
        y[i] = s / low[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= low[k, i] * out[k]
        out[i] = s / low[i, i]
    return True


@njit(cache=True)
def _servo_ticks(q, qd, q_d, qd_d, kp, kd, h, substeps, implicit, lower, upper,
                 origin_xyz, origin_rot, axis, mass, com, inertia, qdd_out):
    e, n = q.shape
    m = np.empty((n, n))
    rhs = np.empty(n)
    acc = np.empty(n)
    w_rot = np.empty((n, 3, 3))
    w_pos = np.empty((n, 3))
    w_axis = np.empty((n, 3))
    w_com = np.empty((n, 3))
    w_in = np.empty((n, 3, 3))
    dt = h * substeps
    for b in range(e):
        qd0 = qd[b].copy()
        for _ in range(substeps):
            _mass_matrix(q[b], origin_xyz, origin_rot, axis, mass, com, inertia, m, w_rot, w_pos, w_axis, w_com, w_in)
            for i in range(n):
                if implicit:
                    m[i, i] += h * kd[i] + h * h * kp[i]
                    rhs[i] = kp[i] * (q_d[b, i] - q[b, i] - h * qd[b, i]) + kd[i] * (qd_d[b, i] - qd[b, i])
                else:
                    rhs[i] = kp[i] * (q_d[b, i] - q[b, i]) + kd[i] * (qd_d[b, i] - qd[b, i])
            if not _chol_solve(m, rhs, acc):
                return b
            for i in range(n):
                v = qd[b, i] + acc[i] * h
                p = q[b, i] + v * h
                if p < lower[i]:
                    p = lower[i]
                    v = 0.0
                elif p > upper[i]:
                    p = upper[i]
                    v = 0.0
                q[b, i] = p
                qd[b, i] = v
        for i in range(n):
            qdd_out[b, i] = (qd[b, i] - qd0[i]) / dt
    return -1


@njit(cache=True)
def _positions(q, origin_xyz, origin_rot, axis, ee_link, ee_offset, sphere_links, sphere_offsets, ee_out, centers_out):
    e, n = q.shape
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    rj = np.empty((3, 3))
    rq = np.empty((3, 3))
    v3 = np.empty(3)
    for b in range(e):
        for i in range(n):
            if i == 0:
                pos[0, :] = origin_xyz[0]
                rj[:, :] = origin_rot[0]
            else:
                _vec3(rot[i - 1], origin_xyz[i], v3)
                for a in range(3):
                    pos[i, a] = pos[i - 1, a] + v3[a]
                _mat3(rot[i - 1], origin_rot[i], rj)
            _rot(axis[i], q[b, i], rq)
            _mat3(rj, rq, rot[i])
        _vec3(rot[ee_link], ee_offset, v3)
        for a in range(3):
            ee_out[b, a] = pos[ee_link, a] + v3[a]
        for k in range(sphere_links.shape[0]):
            link = sphere_links[k]
            if link < 0:
                for a in range(3):
                    centers_out[b, k, a] = sphere_offsets[k, a]
            else:
                _vec3(rot[link], sphere_offsets[k], v3)
                for a in range(3):
                    centers_out[b, k, a] = pos[link, a] + v3[a]


class BatchServo:
    """Steps a batch of arms sharing one model, gains and sim config."""

    def __init__(self, model: ArmModel, gains: PDGains, cfg: SimConfig):
        self.model = model
        self.cfg = cfg
        n = model.n
        self.kp = np.broadcast_to(np.asarray(gains.kp, float), (n,)).copy()
        self.kd = np.broadcast_to(np.asarray(gains.kd, float), (n,)).copy()
        self._args = (
            model.q_lower.copy(), model.q_upper.copy(), model.origin_xyz.copy(), model.origin_rot.copy(),
            model.axis.copy(), model.mass.copy(), model.com.copy(), model.inertia.copy(),
        )
        self._sphere_links = model.sphere_links.astype(np.int64)
        self._sphere_offsets = np.ascontiguousarray(model.sphere_offsets, dtype=float)

    def positions(self, q):
        """End-effector positions (E, 3) and collision-sphere centres (E, S, 3)."""
        m = self.model
        ee = np.empty((q.shape[0], 3))
        centers = np.empty((q.shape[0], len(m.spheres), 3))
        _positions(np.ascontiguousarray(q, dtype=float), m.origin_xyz, m.origin_rot, m.axis, m.ee_link, m.ee_offset,
                   self._sphere_links, self._sphere_offsets, ee, centers)
        return ee, centers

    def tick(self, q, qd, q_d, qd_d, qdd_out) -> None:
        """Advance in place; ``q``/``qd`` are (E, n) float64 C-contiguous arrays."""
        bad = _servo_ticks(q, qd, q_d, qd_d, self.kp, self.kd, self.cfg.h, self.cfg.substeps,
                           self.cfg.servo == "implicit", *self._args, qdd_out)
        if bad >= 0:
            raise PhysicsFault(f"mass matrix is numerically singular in arm {bad}")
