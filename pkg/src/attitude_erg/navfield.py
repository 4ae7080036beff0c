"""Navigation field on the unit quaternions.

The field is expressed through an angular-rate-like 3-vector ``u`` that acts
on a quaternion through ``2 dv/dt = E(v) u``. With this convention ``u``
rotates inertial directions: ``d/dt R(v) x = u x R(v) x``. The attraction,
repulsion and destabilization terms are all 3-vectors of this kind, and the
potentials below satisfy ``dP = -(rho_r + rho_e) . u dt`` along the flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import quat
from .constraints import NO_CONE, ConstraintSet, theta_min

PARALLEL_TOL = 1e-10
DEGENERATE_TOL = 1e-12
QUANTUM = 1e9

_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class NavParams:
    eta: float
    zeta: float
    delta: float
    seed: int = 0
    destabilization: bool = True

    def __post_init__(self):
        if not 0.0 < self.eta <= self.delta < self.zeta < np.pi:
            raise ValueError("navigation margins must satisfy 0 < eta <= delta < zeta < pi")

    @classmethod
    def from_constraints(cls, cset: ConstraintSet, seed: int = 0, destabilization: bool = True) -> "NavParams":
        return cls(cset.eta, cset.zeta, cset.delta, seed, destabilization)


@dataclass
class FieldSample:
    rho_r: np.ndarray
    rho_e: np.ndarray
    rho_d: np.ndarray
    rho_total: np.ndarray
    active_cone: int
    on_discontinuity: bool
    theta: float


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def state_hash(seed: int, v) -> int:
    """Deterministic hash of ``seed`` and ``v`` quantized to 1e-9."""
    h = seed & _MASK
    for x in v:
        k = math.floor(float(x) * QUANTUM + 0.5)
        h = splitmix64(h ^ (k & _MASK))
    return h


def hash_angle(h: int) -> float:
    return (h >> 11) * (1.0 / 9007199254740992.0) * 2.0 * math.pi


def orthonormal_pair(n):
    """Two unit vectors completing ``n / |n|`` to a right-handed basis."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    k = int(np.argmin(np.abs(n)))
    a = np.zeros(3)
    a[k] = 1.0
    b1 = np.cross(n, a)
    b1 /= np.linalg.norm(b1)
    return b1, np.cross(n, b1)


def reference_error(v, r) -> np.ndarray:
    return quat.canonical(quat.quat_product(v, quat.conjugate(r), renormalize=False))


def rho_attraction(v, r, eta: float) -> np.ndarray:
    vt = reference_error(v, r)
    return -vt[1:] / max(np.linalg.norm(vt[1:]), math.sin(eta / 2.0))


def repulsion_direction(v, h, e, prev=None, seed: int = 0) -> np.ndarray:
    """Unit ``h x R(v) e``; falls back to ``prev`` or a seeded vector orthogonal to ``h``."""
    c = np.cross(h, quat.rotation_matrix(v) @ e)
    n = np.linalg.norm(c)
    if n > DEGENERATE_TOL:
        return c / n
    if prev is not None and np.linalg.norm(prev) > 0.0:
        return np.asarray(prev, dtype=float) / np.linalg.norm(prev)
    b1, b2 = orthonormal_pair(h)
    a = hash_angle(state_hash(seed, v))
    return math.cos(a) * b1 + math.sin(a) * b2


def _ramp(theta: float, params: NavParams) -> float:
    return max((params.zeta - theta) / (params.zeta - params.delta), 0.0)


def rho_repulsion(v, cset: ConstraintSet, params: NavParams, prev=None) -> tuple[np.ndarray, int]:
    theta, idx = theta_min(v, cset)
    if idx == NO_CONE or theta >= params.zeta:
        return np.zeros(3), idx
    n = repulsion_direction(v, cset.h, cset.cones[idx].e, prev, params.seed)
    return _ramp(theta, params) * n, idx


def null_direction(rho_e, rho_r, seed: int = 0, v=None) -> tuple[np.ndarray, bool]:
    """Unit vector orthogonal to both inputs and a flag telling whether it was a random pick.

    Independent inputs give ``(rho_e x rho_r) / |.|``. Parallel inputs leave a
    whole plane to choose from; the pick is a seeded hash of ``v``. Two zero
    inputs return the zero vector.
    """
    rho_e = np.asarray(rho_e, dtype=float)
    rho_r = np.asarray(rho_r, dtype=float)
    ne, nr = np.linalg.norm(rho_e), np.linalg.norm(rho_r)
    if ne == 0.0 and nr == 0.0:
        return np.zeros(3), True
    c = np.cross(rho_e, rho_r)
    nc = np.linalg.norm(c)
    if nc > PARALLEL_TOL * ne * nr and ne > 0.0 and nr > 0.0:
        return c / nc, False
    base = rho_e if ne >= nr else rho_r
    b1, b2 = orthonormal_pair(base)
    key = quat.IDENTITY if v is None else v
    a = hash_angle(state_hash(seed, key))
    return math.cos(a) * b1 + math.sin(a) * b2, True


def rho_destabilization(v, r, cset: ConstraintSet, params: NavParams, prev=None) -> tuple[np.ndarray, bool]:
    theta, idx = theta_min(v, cset)
    if idx == NO_CONE or theta >= params.zeta:
        return np.zeros(3), False
    n = repulsion_direction(v, cset.h, cset.cones[idx].e, prev, params.seed)
    rr = rho_attraction(v, r, params.eta)
    mag = _ramp(theta, params) * max(-float(rr @ n), 0.0)
    if mag == 0.0:
        return np.zeros(3), False
    phi, random_pick = null_direction(_ramp(theta, params) * n, rr, params.seed, v)
    return mag * phi, random_pick


def field(v, r, cset: ConstraintSet, params: NavParams, prev=None) -> FieldSample:
    v = np.asarray(v, dtype=float)
    theta, idx = theta_min(v, cset)
    rr = rho_attraction(v, r, params.eta)
    re, _ = rho_repulsion(v, cset, params, prev)
    if params.destabilization:
        rd, jump = rho_destabilization(v, r, cset, params, prev)
    else:
        rd, jump = np.zeros(3), False
    total = quat.kinematic_matrix(v) @ (rr + re + rd)
    return FieldSample(rr, re, rd, total, idx, jump, theta)


def potential_attraction(v, r, eta: float) -> float:
    vt = reference_error(v, r)
    alpha = 2.0 * math.acos(min(1.0, abs(float(vt[0]))))
    s = math.sin(eta / 2.0)
    if alpha <= eta:
        return 2.0 / s * (1.0 - math.cos(alpha / 2.0))
    return 2.0 / s * (1.0 - math.cos(eta / 2.0)) + alpha - eta


def potential_repulsion(v, cset: ConstraintSet, params: NavParams) -> float:
    theta, idx = theta_min(v, cset)
    if idx == NO_CONE or theta >= params.zeta:
        return 0.0
    return 0.5 * (params.zeta - theta) ** 2 / (params.zeta - params.delta)


def potential(v, r, cset: ConstraintSet, params: NavParams) -> float:
    return potential_attraction(v, r, params.eta) + potential_repulsion(v, cset, params)


def _flow_rate(v, r, cset, params):
    v = v / np.linalg.norm(v)
    s = field(v, r, cset, params)
    return 0.5 * s.rho_total


def flow_step(v, r, cset: ConstraintSet, params: NavParams, dt: float) -> np.ndarray:
    """One RK4 step of ``2 dv/dt = E(v) (rho_r + rho_e + rho_d)``."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=float)
    k1 = _flow_rate(v, r, cset, params)
    k2 = _flow_rate(v + 0.5 * dt * k1, r, cset, params)
    k3 = _flow_rate(v + 0.5 * dt * k2, r, cset, params)
    k4 = _flow_rate(v + dt * k3, r, cset, params)
    return quat.normalize(v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def on_saddle_manifold(v, r, cset: ConstraintSet, tol: float = 1e-6, cone: int = 0) -> bool:
    """True where attraction pulls straight into cone ``cone`` and ``v`` is outside it.

    The repulsion direction ``h x R(v) e`` must be parallel to ``Im(v r*)``
    (so the attraction ``-Im(v r*)`` is antiparallel to the repulsion), within
    an angular tolerance ``tol``.
    """
    e = cset.cones[cone].e
    if cset.h @ quat.rotation_matrix(v) @ e > math.cos(cset.cones[cone].psi):
        return False
    vt = reference_error(v, r)
    ni = np.linalg.norm(vt[1:])
    if ni < DEGENERATE_TOL:
        return False
    c = np.cross(cset.h, quat.rotation_matrix(v) @ e)
    nc = np.linalg.norm(c)
    if nc < DEGENERATE_TOL:
        return False
    cosang = float(np.clip(c @ vt[1:] / (nc * ni), -1.0, 1.0))
    return math.acos(cosang) <= tol


def saddle_residual(v, r, cset: ConstraintSet, cone: int = 0) -> np.ndarray:
    """Residuals of the saddle conditions: boundary distance and direction mismatch."""
    v = np.asarray(v, dtype=float) / np.linalg.norm(v)
    e = cset.cones[cone].e
    Re = quat.rotation_matrix(v) @ e
    c = np.cross(cset.h, Re)
    vt = reference_error(v, r)
    d = c / np.linalg.norm(c) - vt[1:] / np.linalg.norm(vt[1:])
    return np.concatenate(([cset.h @ Re - math.cos(cset.cones[cone].psi + cset.delta)], d))


def find_saddle(r, cset: ConstraintSet, cone: int = 0) -> np.ndarray | None:
    """Locate the saddle point associated with cone ``cone``, or ``None`` if absent.

    Starting guess: rotate ``r`` about ``R(r) e x h`` so that the sensor passes
    through ``h`` and stops on the far side at the static-margin boundary. The
    guess is then polished by least squares on the saddle residuals.
    """
    from scipy.optimize import least_squares

    r = quat.as_quat(r)
    e = cset.cones[cone].e
    psi = cset.cones[cone].psi
    Rre = quat.rotation_matrix(r) @ e
    axis = np.cross(Rre, cset.h)
    if np.linalg.norm(axis) < DEGENERATE_TOL:
        return None
    beta = math.acos(float(np.clip(Rre @ cset.h, -1.0, 1.0)))
    t = beta + psi + cset.delta
    if t >= math.pi:
        return None
    s0 = quat.quat_product(quat.axis_angle(axis, t), r)

    def resid(x):
        s = quat.quat_product(quat.rate_exponential(x, 1.0), s0)
        return saddle_residual(s, r, cset, cone)

    sol = least_squares(resid, np.zeros(3), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return quat.quat_product(quat.rate_exponential(sol.x, 1.0), s0)


def sample_sphere_grid(resolution: int) -> np.ndarray:
    """Unit directions on a latitude/longitude grid, ``resolution`` rings of ``2 * resolution`` points."""
    pol = (np.arange(resolution) + 0.5) * math.pi / resolution
    az = np.arange(2 * resolution) * math.pi / resolution
    P, A = np.meshgrid(pol, az, indexing="ij")
    return np.stack([np.sin(P) * np.cos(A), np.sin(P) * np.sin(A), np.cos(P)], axis=-1).reshape(-1, 3)


def attitude_for_heading(r, e, d) -> np.ndarray:
    """Smallest extra rotation of ``r`` that points body axis ``e`` along inertial ``d``."""
    a = quat.rotation_matrix(r) @ e
    c = np.cross(a, d)
    ang = math.atan2(np.linalg.norm(c), float(a @ d))
    if np.linalg.norm(c) < DEGENERATE_TOL:
        if ang < 1.0:
            return np.array(r, dtype=float)
        b1, _ = orthonormal_pair(a)
        c = b1
    return quat.quat_product(quat.axis_angle(c, ang), r)


FIELD_COLUMNS = (
    "d_1", "d_2", "d_3", "v_R", "v_1", "v_2", "v_3", "theta_v",
    "rho_r_1", "rho_r_2", "rho_r_3", "rho_e_1", "rho_e_2", "rho_e_3",
    "rho_d_1", "rho_d_2", "rho_d_3", "rho_R", "rho_1", "rho_2", "rho_3",
    "P_r", "P_e", "P",
)


def sample_field(r, cset: ConstraintSet, params: NavParams, resolution: int, cone: int = 0) -> np.ndarray:
    """Field and potential along a sphere grid of sensor headings.

    Each grid direction ``d`` is turned into an attitude by the smallest
    rotation of ``r`` that points the sensor of cone ``cone`` (body x-axis
    without cones) along ``d``. Rows follow ``FIELD_COLUMNS``.
    """
    e = cset.cones[cone].e if cset.cones else np.array([1.0, 0.0, 0.0])
    rows = []
    for d in sample_sphere_grid(resolution):
        v = attitude_for_heading(r, e, d)
        s = field(v, r, cset, params)
        pr = potential_attraction(v, r, params.eta)
        pe = potential_repulsion(v, cset, params)
        theta = s.theta if np.isfinite(s.theta) else math.pi
        rows.append(np.concatenate((d, v, [theta], s.rho_r, s.rho_e, s.rho_d, s.rho_total, [pr, pe, pr + pe])))
    return np.array(rows)
