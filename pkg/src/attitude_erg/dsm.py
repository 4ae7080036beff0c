"""Dynamic safety margin: exclusion-cone and actuator-saturation parts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, saturation_margin, theta_min
from .plant import ControlGains, control_torque, lyapunov

GAMMA_MODES = ("nagumo", "conservative")


@dataclass(frozen=True)
class DsmParams:
    kappa_e: float = 10.0
    kappa_a: float = 10.0
    kappa_tau: float = 10.0
    gamma_a: float = 0.0
    gamma_mode: str = "nagumo"

    def __post_init__(self):
        if min(self.kappa_e, self.kappa_a, self.kappa_tau) <= 0.0:
            raise ValueError("kappa gains must be positive")
        if not self.gamma_a >= 0.0:
            raise ValueError("gamma_a must be non-negative")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {GAMMA_MODES}")


def normalized_kappa_tau(kappa: float, gains: ControlGains, tau_max) -> float:
    """Optional unit-normalized torque gain ``kappa * 2 kP / |tau_max|``."""
    return kappa * 2.0 * gains.kP / float(np.linalg.norm(tau_max))


def gamma_e_from_theta(theta: float, kP: float) -> float:
    th = min(max(theta, 0.0), math.pi)
    return 2.0 * kP * (1.0 - math.cos(th / 2.0))


def gamma_e(v, cset: ConstraintSet, gains: ControlGains) -> float:
    """Energy level below which the cone constraints cannot be reached.

    Without cones the margin is infinite and the level reduces to ``2 kP``.
    """
    return gamma_e_from_theta(theta_min(v, cset)[0], gains.kP)


def delta_e(qtilde, omega, v, cset: ConstraintSet, gains: ControlGains, J, params: DsmParams) -> float:
    return params.kappa_e * (gamma_e(v, cset, gains) - lyapunov(qtilde, omega, gains, J))


def delta_a(qtilde, omega, gains: ControlGains, J, tau_max, params: DsmParams) -> float:
    tau = control_torque(qtilde, omega, gains)
    return min(
        params.kappa_tau * saturation_margin(tau, tau_max),
        params.kappa_a * (params.gamma_a - lyapunov(qtilde, omega, gains, J)),
    )


def delta_total(qtilde, omega, v, cset: ConstraintSet, gains: ControlGains, J, params: DsmParams,
                saturation: bool = True) -> float:
    """``min(delta_e, delta_a)``; ``saturation=False`` drops the actuator term."""
    de = delta_e(qtilde, omega, v, cset, gains, J, params)
    if not saturation:
        return de
    return min(de, delta_a(qtilde, omega, gains, J, cset.tau_max, params))


def in_invariant_set(qtilde, omega, gains: ControlGains, J, tau_max, gamma_a: float) -> bool:
    tau = control_torque(qtilde, omega, gains)
    return bool(np.all(np.abs(tau) <= np.asarray(tau_max))) and lyapunov(qtilde, omega, gains, J) <= gamma_a
