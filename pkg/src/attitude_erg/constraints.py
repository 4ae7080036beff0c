"""Exclusion-cone and actuator-saturation constraints.

Angles are radians throughout; scenario files carry degrees and convert on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import quat

NO_CONE = -1


def _unit(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be a finite 3-vector")
    n = np.linalg.norm(x)
    if abs(n - 1.0) > 1e-12:
        raise ValueError(f"{name} must have unit norm (|{name}| = {n:.15g})")
    return x


@dataclass(frozen=True)
class ExclusionCone:
    e: np.ndarray
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "e", _unit(self.e, "e"))
        if not 0.0 < self.psi < np.pi:
            raise ValueError(f"half-aperture must lie in (0, pi), got {self.psi}")


@dataclass(frozen=True)
class ConstraintSet:
    h: np.ndarray
    cones: Sequence[ExclusionCone]
    tau_max: np.ndarray
    zeta: float
    delta: float
    eta: float
    cone_axes: np.ndarray = field(init=False, repr=False)
    cone_psi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "h", _unit(self.h, "h"))
        object.__setattr__(self, "cones", tuple(self.cones))
        tau_max = np.asarray(self.tau_max, dtype=float)
        if tau_max.shape != (3,) or not np.all(tau_max > 0.0):
            raise ValueError("tau_max must be three positive values")
        object.__setattr__(self, "tau_max", tau_max)
        # eta == delta is admitted: the reference simulations use eta = delta = 5 deg
        if not 0.0 < self.eta <= self.delta < self.zeta < np.pi:
            raise ValueError(
                f"margins must satisfy 0 < eta <= delta < zeta < pi "
                f"(eta={self.eta}, delta={self.delta}, zeta={self.zeta})"
            )
        axes = np.array([c.e for c in self.cones]).reshape(-1, 3)
        psi = np.array([c.psi for c in self.cones], dtype=float)
        object.__setattr__(self, "cone_axes", axes)
        object.__setattr__(self, "cone_psi", psi)


def cone_margins(v, cset: ConstraintSet) -> np.ndarray:
    """Angular margin to every cone boundary (negative inside a cone)."""
    if not cset.cones:
        return np.empty(0)
    c = cset.cone_axes @ quat.rotation_matrix(v).T @ cset.h
    return np.arccos(np.clip(c, -1.0, 1.0)) - cset.cone_psi


def cone_margin(v, cset: ConstraintSet, i: int) -> float:
    c = cset.h @ quat.rotation_matrix(v) @ cset.cones[i].e
    return float(np.arccos(np.clip(c, -1.0, 1.0)) - cset.cones[i].psi)


def theta_min(v, cset: ConstraintSet) -> tuple[float, int]:
    """Smallest cone margin and its index; ``(inf, NO_CONE)`` without cones."""
    m = cone_margins(v, cset)
    if m.size == 0:
        return np.inf, NO_CONE
    i = int(np.argmin(m))  # argmin returns the first minimum
    return float(m[i]), i


def in_R_delta(v, cset: ConstraintSet) -> bool:
    return theta_min(v, cset)[0] >= cset.delta


def in_R_zeta(v, cset: ConstraintSet) -> bool:
    return theta_min(v, cset)[0] >= cset.zeta


@dataclass
class PairCheck:
    i: int
    j: int
    dot: float
    threshold: float

    @property
    def ok(self) -> bool:
        return self.dot < self.threshold


def check_assumption1(cset: ConstraintSet, zeta: float | None = None) -> tuple[bool, list[PairCheck]]:
    """Cone separation check ``e_i.e_j < cos(psi_i + psi_j + 2 zeta)`` for all pairs."""
    zeta = cset.zeta if zeta is None else zeta
    report = []
    n = len(cset.cones)
    for i in range(n):
        for j in range(i + 1, n):
            ci, cj = cset.cones[i], cset.cones[j]
            report.append(PairCheck(i, j, float(ci.e @ cj.e), float(np.cos(ci.psi + cj.psi + 2.0 * zeta))))
    return all(p.ok for p in report), report


def saturation_margin(tau, cset_or_tau_max) -> float:
    """``min_i min(tau_max_i - tau_i, tau_max_i + tau_i)``; negative when saturated."""
    tau_max = getattr(cset_or_tau_max, "tau_max", cset_or_tau_max)
    tau_max = np.asarray(tau_max, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return float(np.min(tau_max - np.abs(tau)))
