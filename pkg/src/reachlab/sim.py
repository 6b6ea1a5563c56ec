"""Torque-level stepping and the joint PD servo with dynamics compensation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Literal

import numpy as np

from .dynamics import combined_bias, ee_position, mass_matrix
from .model import ArmModel, RobotState

MAX_CONDITION = 1e12


class PhysicsFault(RuntimeError):
    """The forward-dynamics solve is numerically unusable."""


@dataclass
class PDGains:
    kp: float | np.ndarray = 400.0
    kd: float | np.ndarray = 40.0

    def __post_init__(self):
        if np.any(np.asarray(self.kp) < 0) or np.any(np.asarray(self.kd) < 0):
            raise ValueError("PD gains must be non-negative")


@dataclass
class JointCommand:
    q_d: np.ndarray
    qdot_d: np.ndarray

    @classmethod
    def hold(cls, q) -> "JointCommand":
        q = np.array(q, dtype=float)
        return cls(q, np.zeros_like(q))


@dataclass
class SimConfig:
    dt: float = 0.01
    substeps: int = 4
    integration_mode: Literal["accumulate", "reference_position"] = "accumulate"
    lambda1: float = 0.5
    # "implicit" evaluates the PD terms at the end of each substep (stable PD);
    # arms with light distal links need it once h * kd / M exceeds 2.
    servo: Literal["explicit", "implicit"] = "explicit"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        if self.integration_mode not in ("accumulate", "reference_position"):
            raise ValueError(f"unknown integration mode {self.integration_mode!r}")
        if self.servo not in ("explicit", "implicit"):
            raise ValueError(f"unknown servo mode {self.servo!r}")

    @property
    def h(self) -> float:
        return self.dt / self.substeps


def pd_torque(model: ArmModel, state: RobotState, cmd: JointCommand, gains: PDGains) -> np.ndarray:
    """tau = C qdot + g + kp (q_d - q) + kd (qdot_d - qdot); no M qddot_d term."""
    bias = combined_bias(model, state.q, state.qdot)
    return bias + gains.kp * (cmd.q_d - state.q) + gains.kd * (cmd.qdot_d - state.qdot)


def forward_dynamics(model: ArmModel, q, qdot, tau) -> np.ndarray:
    m = mass_matrix(model, q)
    eig = np.linalg.eigvalsh(m)
    if np.any(eig[..., 0] <= 0) or np.any(eig[..., -1] > MAX_CONDITION * eig[..., 0]):
        raise PhysicsFault("mass matrix is numerically singular")
    rhs = np.asarray(tau, float) - combined_bias(model, q, qdot)
    return np.linalg.solve(m, rhs[..., None])[..., 0]


def _integrate(model: ArmModel, q, qdot, qddot, h):
    qdot = qdot + qddot * h
    q = q + qdot * h
    clamped = np.clip(q, model.q_lower, model.q_upper)
    qdot = np.where(clamped != q, 0.0, qdot)
    return clamped, qdot


def step(model: ArmModel, state: RobotState, tau, cfg: SimConfig) -> RobotState:
    """Advance one control tick under a torque held constant over the substeps.

    Semi-implicit Euler; a joint that crosses a position limit is pinned to it
    with its velocity zeroed. ``qddot_last`` is the tick-averaged realized
    acceleration, ``(qdot_new - qdot_old) / dt``.
    """
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise PhysicsFault("non-finite torque")
    q, qdot = state.q, state.qdot
    for _ in range(cfg.substeps):
        qddot = forward_dynamics(model, q, qdot, tau)
        q, qdot = _integrate(model, q, qdot, qddot, cfg.h)
    return RobotState(q, qdot, (qdot - state.qdot) / cfg.dt)


def servo_step(model: ArmModel, state: RobotState, cmd: JointCommand, gains: PDGains, cfg: SimConfig) -> RobotState:
    """Advance one control tick with the PD servo re-evaluated at every substep.

    This is the simulated robot's internal joint controller: the command is
    held for the tick while the servo runs at the physics rate.
    """
    q, qdot = state.q, state.qdot
    h = cfg.h
    for _ in range(cfg.substeps):
        if cfg.servo == "explicit":
            tau = pd_torque(model, RobotState(q, qdot, state.qddot_last), cmd, gains)
            qddot = forward_dynamics(model, q, qdot, tau)
        else:
            # M qddot = kp (q_d - q') + kd (qdot_d - qdot') with q', qdot' after the substep
            kp = np.broadcast_to(np.asarray(gains.kp, float), q.shape)
            kd = np.broadcast_to(np.asarray(gains.kd, float), q.shape)
            m = mass_matrix(model, q) + np.eye(model.n) * (h * kd + h * h * kp)[..., None, :]
            rhs = kp * (cmd.q_d - q - h * qdot) + kd * (cmd.qdot_d - qdot)
            qddot = np.linalg.solve(m, rhs[..., None])[..., 0]
        q, qdot = _integrate(model, q, qdot, qddot, h)
    return RobotState(q, qdot, (qdot - state.qdot) / cfg.dt)


def integrate_command(model: ArmModel, cmd: JointCommand, qdot_d_new, state: RobotState, cfg: SimConfig) -> JointCommand:
    """Turn a desired joint velocity into the next joint target.

    ``accumulate`` integrates the target (q_d += qdot_d dt); ``reference_position``
    re-anchors it at the measured pose (q_d = q + lambda1 dt qdot_d).
    """
    qdot_d_new = np.asarray(qdot_d_new, dtype=float)
    if cfg.integration_mode == "accumulate":
        q_d = cmd.q_d + qdot_d_new * cfg.dt
    else:
        q_d = state.q + cfg.lambda1 * cfg.dt * qdot_d_new
    return JointCommand(model.clamp(q_d), qdot_d_new.copy())


@dataclass
class TraceWriter:
    """CSV trajectory trace: t, q_1..q_n, qdot_1..qdot_n, ee_x, ee_y, ee_z, err."""

    stream: IO[str]
    n: int
    _writer: csv.writer = field(init=False)

    def __post_init__(self):
        self._writer = csv.writer(self.stream)
        header = ["t"] + [f"q{i + 1}" for i in range(self.n)] + [f"qdot{i + 1}" for i in range(self.n)]
        self._writer.writerow(header + ["ee_x", "ee_y", "ee_z", "err"])

    def write(self, t: float, state: RobotState, ee: np.ndarray, err: float) -> None:
        row = [t, *state.q, *state.qdot, *ee, err]
        self._writer.writerow([f"{v:.9g}" for v in row])


def simulate_trace(model, state, cmd, gains, cfg, goal, ticks, stream) -> RobotState:
    """Hold ``cmd`` for ``ticks`` control ticks, writing a trace row per tick."""
    writer = TraceWriter(stream, model.n)
    for k in range(ticks + 1):
        ee = ee_position(model, state.q)
        writer.write(k * cfg.dt, state, ee, float(np.linalg.norm(goal - ee)))
        if k < ticks:
            state = servo_step(model, state, cmd, gains, cfg)
    return state
