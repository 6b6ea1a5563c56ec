"""Analytic operational-space controllers used as baselines.

Two controllers are provided: a velocity-based law (OSC-V) that tracks a
reference joint velocity obtained through the Jacobian pseudoinverse, and a
simplified acceleration-based law (OSC-A). Both accept batched states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import _mv, _rnea, cross, link_frames, mass_matrix
from .model import ArmModel, RobotState
from .sim import PDGains


@dataclass
class TaskGains:
    kappa_p: float = 100.0
    kappa_d: float = 20.0
    kd_joint: float = 10.0
    alpha: float = 0.0
    damping: float = 1e-4

    def __post_init__(self):
        for name in ("kappa_p", "kappa_d", "kd_joint", "alpha", "damping"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


OSC_V_GAINS = TaskGains(kappa_p=4.0, kappa_d=0.0, kd_joint=10.0)
OSC_A_GAINS = TaskGains(kappa_p=100.0, kappa_d=20.0, kd_joint=10.0)


@dataclass
class TaskTarget:
    x_d: np.ndarray
    xdot_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    xddot_d: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class NullSpaceObjective:
    """Joint-centring secondary task.

    ``force`` is the gradient of ``stiffness/2 * |q - rest_pose|^2``; the
    controllers subtract it inside the null space, which pulls the arm
    towards ``rest_pose``.
    """

    rest_pose: np.ndarray
    stiffness: float = 0.0

    def force(self, q: np.ndarray) -> np.ndarray:
        return self.stiffness * (q - self.rest_pose)


def damped_pseudoinverse(J, damping: float = 0.0) -> np.ndarray:
    """J^T (J J^T + damping^2 I)^-1, computed through the smaller Gram matrix.

    With ``damping == 0`` and a rank-deficient ``J`` the exact Moore-Penrose
    pseudoinverse is returned instead.
    """
    if damping < 0:
        raise ValueError("damping must be non-negative")
    J = np.asarray(J, dtype=float)
    m, n = J.shape[-2:]
    jt = np.swapaxes(J, -1, -2)
    lam2 = damping * damping
    if m <= n:
        gram = J @ jt + lam2 * np.eye(m)
    else:
        gram = jt @ J + lam2 * np.eye(n)
    if damping == 0.0 and np.any(np.linalg.cond(gram) > 1e12):
        return np.linalg.pinv(J)
    if m <= n:
        return np.swapaxes(np.linalg.solve(gram, J), -1, -2)
    return np.linalg.solve(gram, jt)


def nullspace_projector(J, J_plus) -> np.ndarray:
    n = np.shape(J)[-1]
    return np.eye(n) - np.asarray(J_plus) @ np.asarray(J)


def jdot_qdot(model: ArmModel, q, qdot) -> np.ndarray:
    """End-effector acceleration at zero joint acceleration, i.e. dJ/dt qdot."""
    frames = link_frames(model, q)
    qdot = np.asarray(qdot, dtype=float)
    batch = frames.ee.shape[:-1]
    w = np.zeros(batch + (3,))
    dw = np.zeros(batch + (3,))
    acc = np.zeros(batch + (3,))
    p_prev = np.zeros(batch + (3,))
    for i in range(model.ee_link + 1):
        r = frames.pos[..., i, :] - p_prev
        acc = acc + cross(dw, r) + cross(w, cross(w, r))
        spin = frames.axis[..., i, :] * qdot[..., i, None]
        dw = dw + cross(w, spin)
        w = w + spin
        p_prev = frames.pos[..., i, :]
    r = frames.ee - p_prev
    return acc + cross(dw, r) + cross(w, cross(w, r))


def coriolis_times(model: ArmModel, q, qdot, v) -> np.ndarray:
    """C(q, qdot) v for the Christoffel-symbol Coriolis matrix.

    The velocity product is the symmetric bilinear form whose diagonal is the
    Newton-Euler bias ``C(q, u) u``, recovered by polarisation.
    """
    frames = link_frames(model, q)
    zero, g0 = np.zeros(model.n), np.zeros(3)
    qdot, v = np.asarray(qdot, float), np.asarray(v, float)

    def quad(u):
        return _rnea(model, frames, u, zero, g0)

    return 0.5 * (quad(qdot + v) - quad(qdot) - quad(v))


def _dynamics_terms(model: ArmModel, q, qdot):
    frames = link_frames(model, q)
    zero = np.zeros(model.n)
    gravity = _rnea(model, frames, zero, zero, model.gravity)
    coriolis = _rnea(model, frames, qdot, zero, np.zeros(3))
    jac = np.swapaxes(cross(frames.axis, frames.ee[..., None, :] - frames.pos), -1, -2)
    jac[..., :, model.ee_link + 1 :] = 0.0
    return frames, jac, gravity, coriolis


def inverse_dynamics_torque(model: ArmModel, state: RobotState, q_d, qdot_d, qddot_d, gains: PDGains) -> np.ndarray:
    """tau = M qddot_d + C qdot_d + g + kp (q_d - q) + kd (qdot_d - qdot)."""
    q, qdot = state.q, state.qdot
    m = mass_matrix(model, q)
    _, _, gravity, _ = _dynamics_terms(model, q, qdot)
    return (_mv(m, np.asarray(qddot_d, float)) + coriolis_times(model, q, qdot, qdot_d) + gravity
            + gains.kp * (np.asarray(q_d) - q) + gains.kd * (np.asarray(qdot_d) - qdot))


class OscVController:
    """Velocity-based OSC. Keeps the previous reference joint velocity so the
    reference acceleration can be formed by differencing across ticks."""

    def __init__(self, model: ArmModel, gains: TaskGains = OSC_V_GAINS, ns: NullSpaceObjective | None = None, dt: float = 0.01):
        self.model = model
        self.gains = gains
        self.ns = ns or NullSpaceObjective(model.home_pose.copy(), 0.0)
        self.dt = dt
        self._prev_qdot_r = None

    def reset(self, lanes=None) -> None:
        """Forget the stored reference velocity (for all lanes or the given batch rows)."""
        if lanes is None or self._prev_qdot_r is None:
            self._prev_qdot_r = None
        else:
            self._prev_qdot_r[lanes] = np.nan

    def reference_velocity(self, state: RobotState, target: TaskTarget):
        model, g = self.model, self.gains
        frames, jac, _, _ = _dynamics_terms(model, state.q, state.qdot)
        xdot_r = g.kappa_p * (np.asarray(target.x_d) - frames.ee) + np.asarray(target.xdot_d)
        j_plus = damped_pseudoinverse(jac, g.damping)
        proj = nullspace_projector(jac, j_plus)
        return _mv(j_plus, xdot_r) - g.alpha * _mv(proj, self.ns.force(state.q))

    def __call__(self, state: RobotState, target: TaskTarget) -> np.ndarray:
        model, g = self.model, self.gains
        qdot_r = self.reference_velocity(state, target)
        if self._prev_qdot_r is None or self._prev_qdot_r.shape != qdot_r.shape:
            qddot_r = np.zeros_like(qdot_r)
        else:
            qddot_r = np.nan_to_num((qdot_r - self._prev_qdot_r) / self.dt, nan=0.0)
        self._prev_qdot_r = qdot_r
        m = mass_matrix(model, state.q)
        _, _, gravity, _ = _dynamics_terms(model, state.q, state.qdot)
        return (_mv(m, qddot_r) + coriolis_times(model, state.q, state.qdot, qdot_r) + gravity
                + g.kd_joint * (qdot_r - state.qdot))


def osc_v_step(model, state, target, gains, ns, controller: OscVController | None = None) -> np.ndarray:
    """One OSC-V torque evaluation; pass a persistent ``controller`` across ticks."""
    if controller is None:
        controller = OscVController(model, gains, ns)
    return controller(state, target)


def osc_a_step(model: ArmModel, state: RobotState, target: TaskTarget, gains: TaskGains,
               ns: NullSpaceObjective | None = None) -> np.ndarray:
    q, qdot = state.q, state.qdot
    frames, jac, gravity, coriolis = _dynamics_terms(model, q, qdot)
    xdot = _mv(jac, qdot)
    xddot_r = (gains.kappa_p * (np.asarray(target.x_d) - frames.ee)
               + gains.kappa_d * (np.asarray(target.xdot_d) - xdot) + np.asarray(target.xddot_d))
    j_plus = damped_pseudoinverse(jac, gains.damping)
    qddot_r = _mv(j_plus, xddot_r - jdot_qdot(model, q, qdot))
    proj = nullspace_projector(jac, j_plus)
    secondary = gains.kd_joint * qdot
    if ns is not None:
        secondary = secondary + gains.alpha * ns.force(q)
    return _mv(mass_matrix(model, q), qddot_r) + coriolis + gravity - _mv(proj, secondary)


class OscAController:
    def __init__(self, model: ArmModel, gains: TaskGains = OSC_A_GAINS, ns: NullSpaceObjective | None = None, dt: float = 0.01):
        self.model = model
        self.gains = gains
        self.ns = ns
        self.dt = dt

    def reset(self, lanes=None) -> None:
        pass

    def __call__(self, state: RobotState, target: TaskTarget) -> np.ndarray:
        return osc_a_step(self.model, state, target, self.gains, self.ns)
