"""Pure-Python kernels with the same signatures as the compiled core.

Built directly on the library functions, so it is slow but doubles as a
reference implementation for the compiled version.
"""

from __future__ import annotations

import math

import numpy as np

from . import dsm, navfield, plant, quat
from .constraints import ConstraintSet, ExclusionCone, saturation_margin, theta_min

LOG_COLUMNS = 21
STAT_NAMES = ("min_sat_margin", "min_cone_margin_q", "min_delta", "max_V", "min_theta_v",
              "max_abs_tau", "max_substeps")


class _Model:
    def __init__(self, P, C, seed=0, destabilization=True, saturation=True):
        P = np.asarray(P, dtype=float)
        C = np.asarray(C, dtype=float).reshape(-1, 4)
        self.J = P[0:9].reshape(3, 3)
        self.gains = plant.ControlGains(P[18], P[19])
        cones = [ExclusionCone(c[:3], c[3]) for c in C]
        self.cset = ConstraintSet(P[23:26], cones, P[20:23], P[26], P[27], P[28])
        self.dsm = dsm.DsmParams(P[29], P[30], P[31], P[32])
        self.nav = navfield.NavParams(P[28], P[26], P[27], int(seed), bool(destabilization))
        self.r = P[33:37].copy()
        self.saturation = bool(saturation)

    def margins(self, q, w, v):
        qt = plant.attitude_error(q, v)
        V = plant.lyapunov(qt, w, self.gains, self.J)
        tau = plant.control_torque(qt, w, self.gains)
        de = dsm.delta_e(qt, w, v, self.cset, self.gains, self.J, self.dsm)
        da = dsm.delta_a(qt, w, self.gains, self.J, self.cset.tau_max, self.dsm)
        d = min(de, da) if self.saturation else de
        return d, de, da, V, tau

    def rate(self, v):
        s = navfield.field(v, self.r, self.cset, self.nav)
        return s.rho_r + s.rho_e + s.rho_d


def _ray(v, d, s):
    x = v + s * d
    return x / np.linalg.norm(x)


def governor_step(m: _Model, q, w, v, h, step_len=0.01, max_sub=1000):
    """Backward-Euler substeps of ``dv/dt = max(delta, 0) E(v) rho`` with the plant frozen."""
    d0 = m.margins(q, w, v)[0]
    if not d0 > 0.0:
        return v, 0
    u = m.rate(v)
    speed = float(np.linalg.norm(u))
    if speed == 0.0:
        return v, 0
    n = min(max(int(math.ceil(h * d0 * speed / step_len)), 1), max_sub)
    hs = h / n
    for j in range(n):
        if j > 0:
            d0 = m.margins(q, w, v)[0]
            if not d0 > 0.0:
                break
            u = m.rate(v)
        d = quat.kinematic_matrix(v) @ u

        def g(s):
            vs = _ray(v, d, s)
            return s - hs * max(m.margins(q, w, vs)[0], 0.0), vs

        lo, glo, hi = 0.0, -hs * d0, hs * d0
        ghi, vs = g(hi)
        if ghi <= 0.0:
            v = vs
            continue
        best, side = v, 0
        for _ in range(60):
            s = (lo * ghi - hi * glo) / (ghi - glo)
            if not lo < s < hi:
                s = 0.5 * (lo + hi)
            gs, vs = g(s)
            if gs <= 0.0:
                lo, glo, best = s, gs, vs
                if side == -1:
                    ghi *= 0.5
                side = -1
            else:
                hi, ghi = s, gs
                if side == 1:
                    glo *= 0.5
                side = 1
            if hi - lo <= 1e-13 * hi or gs == 0.0:
                break
        v = best
    return v, n


def simulate(P, C, q0, w0, v0, dt, n_steps, stride, seed=0, destabilization=True, saturation=True,
             step_len=0.01, max_sub=1000):
    m = _Model(P, C, seed, destabilization, saturation)
    state = plant.RigidBodyState(np.array(q0, dtype=float), np.array(w0, dtype=float))
    v = np.array(v0, dtype=float)
    rows = []
    st = dict(zip(STAT_NAMES, (math.inf, math.inf, math.inf, -math.inf, math.inf, 0.0, 0.0)))
    status, step = 0, 0
    while True:
        q, w = state.q, state.omega
        d, de, da, V, tau = m.margins(q, w, v)
        th_v = theta_min(v, m.cset)[0]
        cq = theta_min(q, m.cset)[0]
        sm = saturation_margin(tau, m.cset)
        st["min_sat_margin"] = min(st["min_sat_margin"], sm)
        st["min_cone_margin_q"] = min(st["min_cone_margin_q"], cq)
        st["min_delta"] = min(st["min_delta"], d)
        st["max_V"] = max(st["max_V"], V)
        st["min_theta_v"] = min(st["min_theta_v"], th_v)
        st["max_abs_tau"] = max(st["max_abs_tau"], float(np.max(np.abs(tau))))
        if step % stride == 0 or step == n_steps:
            rows.append(np.concatenate(([step * dt], q, w, tau, v, [d, de, da, th_v, cq, sm])))
        if step == n_steps:
            break
        try:
            v, nsub = governor_step(m, q, w, v, dt, step_len, max_sub)
            st["max_substeps"] = max(st["max_substeps"], nsub)
            state = plant.integrate_step(state, v, m.gains, m.J, dt)
        except (ValueError, np.linalg.LinAlgError):
            status = 2
            break
        if not np.all(np.isfinite(state.omega)):
            status = 2
            break
        step += 1
    log = np.array(rows).reshape(-1, LOG_COLUMNS)
    return log, st, status, step


def nav_flow(P, C, v0, dt, max_steps, tol, seed=0, destabilization=True):
    m = _Model(P, C, seed, destabilization)
    v = np.array(v0, dtype=float)
    p = navfield.potential(v, m.r, m.cset, m.nav)
    rise, min_th, step = 0.0, math.inf, 0
    converged = False
    while True:
        min_th = min(min_th, theta_min(v, m.cset)[0])
        if quat.angular_distance(v, m.r) < tol:
            converged = True
            break
        if step >= max_steps:
            break
        v = navfield.flow_step(v, m.r, m.cset, m.nav, dt)
        pn = navfield.potential(v, m.r, m.cset, m.nav)
        rise = max(rise, pn - p)
        p = pn
        step += 1
    return v, step, converged, min_th, rise


def plant_rollout(P, q0, w0, v, dt, n_steps):
    m = _Model(P, np.zeros((0, 4)))
    state = plant.RigidBodyState(np.array(q0, dtype=float), np.array(w0, dtype=float))
    v = np.asarray(v, dtype=float)
    out = np.empty((n_steps + 1, 12))
    for step in range(n_steps + 1):
        _, _, _, V, tau = m.margins(state.q, state.omega, v)
        out[step] = np.concatenate(([step * dt], state.q, state.omega, tau, [V]))
        if step < n_steps:
            state = plant.integrate_step(state, v, m.gains, m.J, dt)
    return out


def field_rate_at(P, C, v, seed=0, destabilization=True):
    return _Model(P, C, seed, destabilization).rate(np.asarray(v, dtype=float))


def margins_at(P, C, q, w, v, saturation=True):
    d, de, da, V, _ = _Model(P, C, saturation=saturation).margins(
        np.asarray(q, dtype=float), np.asarray(w, dtype=float), np.asarray(v, dtype=float))
    return d, de, da, V
