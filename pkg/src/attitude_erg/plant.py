"""Rigid-body rotational dynamics under the PD prestabilizing controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat


def inertia_matrix(J) -> np.ndarray:
    """Validate an inertia matrix given as 3 diagonal entries or a full 3x3 array."""
    J = np.asarray(J, dtype=float)
    if J.shape == (3,):
        J = np.diag(J)
    if J.shape != (3, 3):
        raise ValueError(f"inertia must be 3 diagonal entries or 3x3, got shape {J.shape}")
    if not np.all(np.isfinite(J)):
        raise ValueError("inertia has non-finite entries")
    if np.max(np.abs(J - J.T)) > 1e-12 * max(1.0, np.max(np.abs(J))):
        raise ValueError("inertia matrix is not symmetric")
    if np.min(np.linalg.eigvalsh(J)) <= 0.0:
        raise ValueError("inertia matrix is not positive definite")
    return J


@dataclass(frozen=True)
class ControlGains:
    kP: float
    kD: float

    def __post_init__(self):
        if not (self.kP > 0.0 and self.kD > 0.0):
            raise ValueError(f"gains must be positive, got kP={self.kP}, kD={self.kD}")


@dataclass
class RigidBodyState:
    q: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.q = quat.normalize(self.q)
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.shape != (3,) or not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be a finite 3-vector")


def attitude_error(q, v) -> np.ndarray:
    """``q v*`` folded onto the hemisphere with non-negative real part."""
    return quat.canonical(quat.error_quaternion(q, v))


def control_torque(qtilde, omega, gains: ControlGains) -> np.ndarray:
    qtilde = np.asarray(qtilde, dtype=float)
    return -gains.kP * qtilde[1:] - gains.kD * np.asarray(omega, dtype=float)


def dynamics_derivative(state: RigidBodyState, tau, J) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dq/dt, domega/dt)``."""
    w = state.omega
    qdot = 0.5 * quat.kinematic_matrix(state.q) @ w
    wdot = np.linalg.solve(J, -np.cross(w, J @ w) + np.asarray(tau, dtype=float))
    return qdot, wdot


def lyapunov(qtilde, omega, gains: ControlGains, J) -> float:
    omega = np.asarray(omega, dtype=float)
    return 2.0 * gains.kP * (1.0 - float(qtilde[0])) + 0.5 * float(omega @ J @ omega)


def in_attraction_basin(qtilde, omega, gains: ControlGains, J) -> bool:
    return lyapunov(qtilde, omega, gains, J) <= 2.0 * gains.kP


def _closed_loop(q, w, v, gains, J):
    qt = attitude_error(q, v)
    tau = control_torque(qt, w, gains)
    qdot = 0.5 * quat.kinematic_matrix(q) @ w
    wdot = np.linalg.solve(J, -np.cross(w, J @ w) + tau)
    return qdot, wdot


def integrate_step(state: RigidBodyState, v, gains: ControlGains, J, dt: float) -> RigidBodyState:
    """One RK4 step of the closed loop with the reference ``v`` held fixed."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    q, w = state.q, state.omega
    k1q, k1w = _closed_loop(q, w, v, gains, J)
    k2q, k2w = _closed_loop(q + 0.5 * dt * k1q, w + 0.5 * dt * k1w, v, gains, J)
    k3q, k3w = _closed_loop(q + 0.5 * dt * k2q, w + 0.5 * dt * k2w, v, gains, J)
    k4q, k4w = _closed_loop(q + dt * k3q, w + dt * k3w, v, gains, J)
    q_new = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    w_new = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return RigidBodyState(quat.normalize(q_new), w_new)


def torque_free_step(state: RigidBodyState, J, dt: float) -> RigidBodyState:
    """RK4 step with zero applied torque (used to check conservation laws)."""
    q, w = state.q, state.omega

    def f(q, w):
        return 0.5 * quat.kinematic_matrix(q) @ w, np.linalg.solve(J, -np.cross(w, J @ w))

    k1q, k1w = f(q, w)
    k2q, k2w = f(q + 0.5 * dt * k1q, w + 0.5 * dt * k1w)
    k3q, k3w = f(q + 0.5 * dt * k2q, w + 0.5 * dt * k2w)
    k4q, k4w = f(q + dt * k3q, w + dt * k3w)
    q_new = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    w_new = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return RigidBodyState(quat.normalize(q_new), w_new)
