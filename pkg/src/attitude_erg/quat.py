"""Quaternion and SO(3) helpers.

Quaternions are plain ``numpy`` arrays stored scalar-first, ``(q_R, q_1, q_2, q_3)``.
Products follow the block form

    [s_R]   [q_R   -q_I^T          ] [p_R]
    [s_I] = [q_I   q_R I_3 + hat(q_I)] [p_I]

and ``rotation_matrix(q)`` maps body-frame vectors into the inertial frame.
"""

from __future__ import annotations

import math

import numpy as np

NORM_TOL = 1e-12
NORM_FAIL = 1e-3

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class NormalizationError(ValueError):
    """Raised when a quaternion has drifted too far from unit norm to be trusted."""


def as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion has non-finite components")
    return q


def normalize(q, fail_tol: float = NORM_FAIL) -> np.ndarray:
    """Renormalize ``q``; deviations above ``fail_tol`` raise instead of being hidden."""
    q = as_quat(q)
    n = np.sqrt(q @ q)
    dev = abs(n - 1.0)
    if dev > fail_tol:
        raise NormalizationError(f"quaternion norm {n:.6g} deviates from 1 by more than {fail_tol:g}")
    if dev > NORM_TOL:
        return q / n
    return q


def canonical(q) -> np.ndarray:
    """Representative of ``q`` with non-negative real part (ties keep ``q``)."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q


def hat(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def product_matrix(q) -> np.ndarray:
    """Left-multiplication matrix ``L(q)`` with ``q p = L(q) p``."""
    q = np.asarray(q, dtype=float)
    L = np.empty((4, 4))
    L[0, 0] = q[0]
    L[0, 1:] = -q[1:]
    L[1:, 0] = q[1:]
    L[1:, 1:] = q[0] * np.eye(3) + hat(q[1:])
    return L


def quat_product(q, p, renormalize: bool = True) -> np.ndarray:
    q = as_quat(q)
    p = as_quat(p)
    qr, qi = q[0], q[1:]
    pr, pi = p[0], p[1:]
    s = np.empty(4)
    s[0] = qr * pr - qi @ pi
    s[1:] = qr * pi + pr * qi + np.cross(qi, pi)
    return normalize(s) if renormalize else s


def conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotation_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    qr, qi = q[0], q[1:]
    return (qr * qr - qi @ qi) * np.eye(3) + 2.0 * np.outer(qi, qi) + 2.0 * qr * hat(qi)


def kinematic_matrix(q) -> np.ndarray:
    """Matrix ``E(q)`` of ``2 dq/dt = E(q) w``."""
    q = np.asarray(q, dtype=float)
    E = np.empty((4, 3))
    E[0] = -q[1:]
    E[1:] = q[0] * np.eye(3) - hat(q[1:])
    return E


def error_quaternion(q, v) -> np.ndarray:
    """Attitude error ``q v*``."""
    return quat_product(q, conjugate(v))


def angular_distance(q, p, geodesic: bool = True) -> float:
    """Rotation angle of ``q p*``.

    ``geodesic=False`` returns the raw ``2 arccos(real part)`` in ``[0, 2 pi]``,
    which distinguishes ``q`` from ``-q``. The geodesic value folds it into
    ``[0, pi]``.
    """
    s = quat_product(q, conjugate(p), renormalize=False)
    # atan2 form of 2 arccos(s_R): well conditioned near zero angle
    re = abs(s[0]) if geodesic else s[0]
    return 2.0 * math.atan2(float(np.linalg.norm(s[1:])), float(re))


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return IDENTITY.copy()
    return np.concatenate(([np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis / n))


def rate_exponential(u, t: float) -> np.ndarray:
    """Flow of ``2 dq/dt = E(q) u`` for constant ``u``: returns ``w`` with ``q(t) = w q(0)``."""
    u = np.asarray(u, dtype=float)
    n = np.linalg.norm(u)
    if n == 0.0:
        return IDENTITY.copy()
    return axis_angle(u / n, n * t)


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniformly distributed unit quaternions, shape ``(n, 4)``."""
    x = rng.standard_normal((n, 4))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
