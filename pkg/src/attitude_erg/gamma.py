"""Lyapunov levels that keep the actuator-saturation set forward invariant.

Two constructions are provided for the closed loop
``tau = -kP q_I - kD w``:

``conservative``
    the smallest Lyapunov value on any plane ``tau_i = +-tau_max_i``;
``nagumo``
    the smallest Lyapunov value among boundary states ``tau_i = +-tau_max_i``
    (other components inside their bounds) where ``tau_i`` is not moving back
    inside. Below that level every boundary state points inward.

Each axis/sign pair is a small non-convex program. After eliminating the
active angular-rate component through the equality constraint, it is solved
twice: by multi-start SLSQP (``scipy.optimize``) and by a derivative-free
zooming grid search that shares nothing with the local solver except the
model functions. The smaller of the two is returned; their gap is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .plant import ControlGains

ORACLE_REL_TOL = 1e-3
FEAS_TOL = 1e-9


class GammaSolveError(RuntimeError):
    pass


class AttitudeLevelSet:
    """Boundary-state model for the rigid body under PD control.

    Free variables for the active axis ``i``: the three imaginary components of
    the attitude error and the two angular-rate components ``j != i``.
    """

    n_axes = 3
    n_free = 5

    def __init__(self, gains: ControlGains, J, tau_max):
        self.kP = float(gains.kP)
        self.kD = float(gains.kD)
        self.J = np.asarray(J, dtype=float)
        if self.J.shape == (3,):
            self.J = np.diag(self.J)
        self.Jinv = np.linalg.inv(self.J)
        self.tau_max = np.asarray(tau_max, dtype=float)
        self.cap = 2.0 * self.kP

    def embed(self, i: int, sign: float, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        q = u[:, :3]
        w = np.empty((u.shape[0], 3))
        others = [k for k in range(3) if k != i]
        w[:, others] = u[:, 3:5]
        w[:, i] = -(sign * self.tau_max[i] + self.kP * q[:, i]) / self.kD
        return q, w

    def unembed(self, i: int, q, w) -> np.ndarray:
        others = [k for k in range(3) if k != i]
        return np.concatenate((q, w[others]))

    def evaluate(self, q, w):
        """Return ``(V, tau, tau_dot, qR)`` for batches of states."""
        qq = np.einsum("ij,ij->i", q, q)
        qR = np.sqrt(np.clip(1.0 - qq, 0.0, None))
        Jw = w @ self.J.T
        # 1 - qR written without cancellation: tiny attitude errors still move V
        V = 2.0 * self.kP * np.minimum(qq, 1.0) / (1.0 + qR) + 0.5 * np.einsum("ij,ij->i", w, Jw)
        tau = -self.kP * q - self.kD * w
        qdot = 0.5 * (qR[:, None] * w - np.cross(q, w))
        wdot = (-np.cross(w, Jw) + tau) @ self.Jinv.T
        taudot = -self.kP * qdot - self.kD * wdot
        return V, tau, taudot, qq

    def box(self, gamma_up: float) -> np.ndarray:
        g = min(gamma_up, self.cap)
        c = 1.0 - g / (2.0 * self.kP)
        qb = math.sqrt(max(0.0, 1.0 - c * c))
        wb = math.sqrt(2.0 * g / np.min(np.linalg.eigvalsh(self.J)))
        return np.array([qb, qb, qb, wb, wb])

    def rate_scale(self) -> float:
        return float(np.max(self.tau_max) * self.kD / np.min(np.linalg.eigvalsh(self.J)))

    def oracle_box(self, i: int, gamma_up: float) -> np.ndarray:
        """Grid box in oracle coordinates: attitude error, then the two inactive torques."""
        b = self.box(gamma_up)
        others = [k for k in range(3) if k != i]
        return np.concatenate((b[:3], self.tau_max[others]))

    def oracle_to_free(self, i: int, Z) -> np.ndarray:
        """Map (q_I, tau_j for j != i) to the free variables; the torque box becomes a plain box."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        others = [k for k in range(3) if k != i]
        U = np.empty_like(Z)
        U[:, :3] = Z[:, :3]
        U[:, 3:5] = -(Z[:, 3:5] + self.kP * Z[:, others]) / self.kD
        return U

    def free_to_oracle(self, i: int, sign: float, u) -> np.ndarray:
        q, w = self.embed(i, sign, u)
        others = [k for k in range(3) if k != i]
        z = np.asarray(u, dtype=float).copy()
        z[3:5] = (-self.kP * q[0] - self.kD * w[0])[others]
        return z

    def unembed_batch(self, i: int, q, w) -> np.ndarray:
        others = [k for k in range(3) if k != i]
        return np.concatenate((q, w[:, others]), axis=1)

    def scan_half_width(self) -> float:
        return 1.0

    def axis_seed(self, i: int, sign: float, x) -> np.ndarray:
        """Free vector with only the active attitude component set."""
        u = np.zeros((np.size(x), 5))
        u[:, i] = x
        return u


class DoubleIntegratorLevelSet:
    """Scalar plant ``x'' = tau`` with ``tau = -kP x - kD x'`` and ``V = (kP x^2 + x'^2) / 2``."""

    n_axes = 1
    n_free = 1

    def __init__(self, kP: float, kD: float, tau_max: float):
        self.kP = float(kP)
        self.kD = float(kD)
        self.tau_max = np.array([float(tau_max)])
        self.cap = np.inf

    def embed(self, i: int, sign: float, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        x = u[:, :1]
        y = -(sign * self.tau_max[0] + self.kP * x) / self.kD
        return x, y

    def unembed(self, i, x, y):
        return np.asarray(x, dtype=float).reshape(1)

    def evaluate(self, x, y):
        V = 0.5 * self.kP * x[:, 0] ** 2 + 0.5 * y[:, 0] ** 2
        tau = -self.kP * x - self.kD * y
        taudot = -self.kP * y - self.kD * tau
        return V, tau, taudot, np.zeros(x.shape[0])

    def box(self, gamma_up: float) -> np.ndarray:
        return np.array([math.sqrt(2.0 * gamma_up / self.kP)])

    def rate_scale(self) -> float:
        return float(self.tau_max[0] * self.kD)

    def scan_half_width(self) -> float:
        return 10.0 * self.tau_max[0] * max(1.0, self.kD * self.kD / self.kP) / self.kP

    def axis_seed(self, i, sign, x):
        return np.reshape(np.asarray(x, dtype=float), (-1, 1))

    def oracle_box(self, i, gamma_up: float) -> np.ndarray:
        return self.box(gamma_up)

    def oracle_to_free(self, i, Z):
        return np.atleast_2d(np.asarray(Z, dtype=float))

    def free_to_oracle(self, i, sign, u):
        return np.asarray(u, dtype=float).reshape(1)

    def closed_form(self, mode: str) -> float:
        kP, kD, c = self.kP, self.kD, self.tau_max[0]
        if mode == "conservative":
            return c * c / (2.0 * (kP + kD * kD))
        # outward boundary states satisfy y <= -kD c / kP; V is smallest at that end
        y0 = -kD * c / kP
        return (c + kD * y0) ** 2 / (2.0 * kP) + 0.5 * y0 * y0


def _violation(problem, i: int, sign: float, mode: str, V, tau, taudot, qq):
    """Largest scaled constraint violation per sample (0 when feasible)."""
    viol = np.maximum(qq - 1.0, 0.0)
    if mode == "nagumo":
        others = [k for k in range(problem.n_axes) if k != i]
        if others:
            excess = (np.abs(tau[:, others]) - problem.tau_max[others]) / problem.tau_max[others]
            viol = np.maximum(viol, np.max(excess, axis=1))
        viol = np.maximum(viol, -sign * taudot[:, i] / problem.rate_scale())
    return np.maximum(viol, 0.0)


def _feasible_values(problem, i, sign, mode, U):
    q, w = problem.embed(i, sign, U)
    V, tau, taudot, qq = problem.evaluate(q, w)
    viol = _violation(problem, i, sign, mode, V, tau, taudot, qq)
    return np.where(viol <= FEAS_TOL, V, np.inf)


def _upper_bound(problem, i, sign, mode) -> tuple[float, np.ndarray | None]:
    """Feasible value from a dense 1-D scan along the active attitude component."""
    xs = np.linspace(-1.0, 1.0, 200001) * problem.scan_half_width()
    U = problem.axis_seed(i, sign, xs)
    vals = _feasible_values(problem, i, sign, mode, U)
    k = int(np.argmin(vals))
    if not np.isfinite(vals[k]):
        return problem.cap, None
    return float(min(vals[k], problem.cap)), U[k]


@dataclass
class AxisSolution:
    axis: int
    sign: int
    solver_value: float
    oracle_value: float
    solver_point: np.ndarray | None
    oracle_point: np.ndarray | None
    restarts: int
    converged: int

    @property
    def value(self) -> float:
        return min(self.solver_value, self.oracle_value)

    @property
    def gap(self) -> float:
        """Relative excess of the local solver over the grid oracle."""
        if not np.isfinite(self.oracle_value) or self.oracle_value == 0.0:
            return 0.0
        return (self.solver_value - self.oracle_value) / self.oracle_value


@dataclass
class GammaSolveResult:
    gamma: float
    mode: str
    active_axis: int
    active_sign: int
    argmin_state: tuple[np.ndarray, np.ndarray] | None
    axes: list[AxisSolution] = field(default_factory=list)

    @property
    def restarts(self) -> int:
        return sum(a.restarts for a in self.axes)

    @property
    def oracle_gap(self) -> float:
        return max(a.gap for a in self.axes)

    @property
    def accepted(self) -> bool:
        return all(a.solver_value <= a.oracle_value * (1.0 + ORACLE_REL_TOL) for a in self.axes
                   if np.isfinite(a.oracle_value))

    def report(self) -> dict:
        out = {
            "mode": self.mode,
            "gamma": self.gamma,
            "active_axis": self.active_axis,
            "active_sign": self.active_sign,
            "restarts": self.restarts,
            "oracle_gap": self.oracle_gap,
            "accepted": self.accepted,
            "axes": [
                {"axis": a.axis, "sign": a.sign, "solver": a.solver_value, "oracle": a.oracle_value,
                 "gap": a.gap, "restarts": a.restarts, "converged": a.converged}
                for a in self.axes
            ],
        }
        if self.argmin_state is not None:
            out["argmin_qtilde_I"] = [float(x) for x in np.ravel(self.argmin_state[0])]
            out["argmin_omega"] = [float(x) for x in np.ravel(self.argmin_state[1])]
        return out


class _ScaledProgram:
    """Objective, constraints and forward-difference derivatives from one batched evaluation."""

    def __init__(self, problem, i, sign, mode, box, vscale):
        self.problem, self.i, self.sign, self.mode = problem, i, sign, mode
        self.box, self.vscale = box, vscale
        self.rscale = problem.rate_scale()
        self.others = [k for k in range(problem.n_axes) if k != i]
        n = problem.n_free
        self.h = 1e-7
        self.stencil = np.vstack((np.zeros(n), self.h * np.eye(n)))
        self._key = None

    def _values(self, Z):
        q, w = self.problem.embed(self.i, self.sign, Z * self.box)
        V, tau, taudot, qq = self.problem.evaluate(q, w)
        cols = [1.0 - qq]
        if self.mode == "nagumo":
            for k in self.others:
                tm = self.problem.tau_max[k]
                cols.append((tm - tau[:, k]) / tm)
                cols.append((tm + tau[:, k]) / tm)
            cols.append(self.sign * taudot[:, self.i] / self.rscale)
        return V / self.vscale, np.stack(cols, axis=1)

    def _update(self, z):
        key = z.tobytes()
        if key != self._key:
            f, c = self._values(z + self.stencil)
            self._f, self._c = f[0], c[0]
            self._df = (f[1:] - f[0]) / self.h
            self._dc = ((c[1:] - c[0]) / self.h).T
            self._key = key

    def fun(self, z):
        self._update(z)
        return float(self._f)

    def jac(self, z):
        self._update(z)
        return self._df

    def cons(self, z):
        self._update(z)
        return self._c

    def cons_jac(self, z):
        self._update(z)
        return self._dc


def multistart_solve(problem, i: int, sign: float, mode: str, restarts: int = 64, seed: int = 0):
    """Multi-start SLSQP on the scaled free variables."""
    gamma_up, u_up = _upper_bound(problem, i, sign, mode)
    box = problem.box(gamma_up if np.isfinite(gamma_up) else 1.0)
    box = np.where(box > 0.0, box, 1.0)
    vscale = gamma_up if np.isfinite(gamma_up) and gamma_up > 0.0 else 1.0
    prog = _ScaledProgram(problem, i, sign, mode, box, vscale)
    cons = [{"type": "ineq", "fun": prog.cons, "jac": prog.cons_jac}]

    rng = np.random.default_rng(seed + 7919 * i + (1 if sign > 0 else 0))
    starts = rng.uniform(-1.0, 1.0, size=(restarts, problem.n_free))
    if u_up is not None:
        starts[0] = u_up / box
    best_v, best_u, converged = np.inf, None, 0
    for z0 in starts:
        res = minimize(prog.fun, z0, jac=prog.jac, method="SLSQP", bounds=[(-1.0, 1.0)] * problem.n_free,
                       constraints=cons, options={"ftol": 1e-15, "maxiter": 500})
        u = res.x * box
        val = _feasible_values(problem, i, sign, mode, u[None, :])[0]
        if res.success:
            converged += 1
        if val < best_v:
            best_v, best_u = float(val), u
    return min(best_v, problem.cap), best_u, restarts, converged


def _zoom(values, cand, box, fine: int, shrink: float, levels: int):
    """Refine each candidate by re-gridding a box that shrinks around the best point."""
    n = box.size
    offsets = np.stack(np.meshgrid(*([np.linspace(-1.0, 1.0, fine)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    best_v, best_z = np.inf, None
    for c in cand:
        center = np.asarray(c, dtype=float).copy()
        cv = values(center[None, :])[0]
        width = box.copy()
        for _ in range(levels):
            width = width * shrink
            pts = np.clip(center + offsets * width, -box, box)
            v = values(pts)
            k = int(np.argmin(v))
            if v[k] < cv:
                cv, center = float(v[k]), pts[k]
        if cv < best_v:
            best_v, best_z = cv, center
    return best_v, best_z


def _coarse_candidates(values, box, coarse: int, keep: int):
    n = box.size
    axes = [np.linspace(-b, b, coarse) for b in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    vals = np.concatenate([values(chunk) for chunk in np.array_split(mesh, max(1, mesh.shape[0] // 100000))])
    order = np.argsort(vals)
    cand = []
    cell = 2.0 * box / (coarse - 1)
    for k in order:
        if not np.isfinite(vals[k]) or len(cand) >= keep:
            break
        if all(np.max(np.abs(mesh[k] - c) / cell) > 2.0 for c in cand):
            cand.append(mesh[k])
    return cand


def _rate_surface(problem, i: int, sign: float, W, lim: float, n_scan: int = 33, n_bisect: int = 44):
    """Points of the Nagumo boundary ``tau_dot_i = 0``.

    ``W`` holds ``(q_j, q_k, tau_j, tau_k)`` for the inactive axes; the active
    attitude component is found in ``[-lim, lim]`` by a bracketing scan plus bisection. Returns
    the free vectors of the lowest-V root per row (NaN rows have no root).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    m = W.shape[0]
    others = [k for k in range(3) if k != i]

    def state(qi):
        qi = np.asarray(qi, dtype=float)
        q = np.empty((qi.size, 3))
        q[:, i] = qi
        q[:, others] = W[idx, :2]
        tau = np.empty((qi.size, 3))
        tau[:, i] = sign * problem.tau_max[i]
        tau[:, others] = W[idx, 2:]
        w = -(tau + problem.kP * q) / problem.kD
        return q, w

    def rate(qi):
        q, w = state(qi)
        V, tau, taudot, qq = problem.evaluate(q, w)
        g = sign * taudot[:, i]
        return np.where(qq <= 1.0, g, np.nan), V

    xs = np.linspace(-lim, lim, n_scan)
    idx = np.repeat(np.arange(m), n_scan)
    g, _ = rate(np.tile(xs, m))
    g = g.reshape(m, n_scan)
    rows, cols = np.nonzero(np.isfinite(g[:, :-1]) & np.isfinite(g[:, 1:]) & (np.sign(g[:, :-1]) != np.sign(g[:, 1:])))
    out = np.full((m, 5), np.nan)
    if rows.size == 0:
        return out
    idx = rows
    lo, hi = xs[cols].copy(), xs[cols + 1].copy()
    glo = g[rows, cols]
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        gm, _ = rate(mid)
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
    root = np.where(glo >= 0.0, lo, hi)  # keep the feasible side of the bracket
    q, w = state(root)
    V, *_ = problem.evaluate(q, w)
    order = np.lexsort((V, rows))
    first = np.ones(order.size, dtype=bool)
    first[1:] = rows[order][1:] != rows[order][:-1]
    pick = order[first]
    out[rows[pick]] = problem.unembed_batch(i, q[pick], w[pick])
    return out


def grid_oracle(problem, i: int, sign: float, mode: str, coarse: int = 15, fine: int = 9,
                levels: int = 45, shrink: float = 0.6, keep: int = 3):
    """Derivative-free zooming grid search.

    The grid lives in the problem's oracle coordinates, where the bounds on
    the inactive torques form a plain box, so its corners are grid nodes. A
    coarse tensor grid picks ``keep`` well separated feasible candidates; each
    is refined by re-gridding a box that shrinks geometrically around the best
    feasible point found so far. For the attitude Nagumo problem a second
    search runs on the rate boundary ``tau_dot_i = 0`` itself, where the
    active attitude component is solved for and the rest is again a box.
    """
    gamma_up, u_up = _upper_bound(problem, i, sign, mode)
    box = problem.oracle_box(i, gamma_up if np.isfinite(gamma_up) else 1.0)
    box = np.where(box > 0.0, box, 1.0)
    n = problem.n_free

    def values(Z):
        return _feasible_values(problem, i, sign, mode, problem.oracle_to_free(i, Z))

    cand = _coarse_candidates(values, box, coarse, keep)
    if u_up is not None:
        cand.append(problem.free_to_oracle(i, sign, u_up))
    best_v, best_z = _zoom(values, cand, box, fine, shrink, levels) if cand else (np.inf, None)
    best_u = None if best_z is None else problem.oracle_to_free(i, best_z)[0]

    if mode == "nagumo" and n == 5:
        sbox = np.delete(box, i)

        def surface_values(W):
            U = _rate_surface(problem, i, sign, W, box[i])
            ok = np.all(np.isfinite(U), axis=1)
            v = np.full(U.shape[0], np.inf)
            if np.any(ok):
                v[ok] = _feasible_values(problem, i, sign, mode, U[ok])
            return v

        scand = _coarse_candidates(surface_values, sbox, 11, keep)
        sv, sz = _zoom(surface_values, scand, sbox, 5, shrink, levels) if scand else (np.inf, None)
        if sv < best_v:
            best_v, best_u = sv, _rate_surface(problem, i, sign, sz[None, :], box[i])[0]
    if not np.isfinite(best_v):
        return problem.cap, None
    return min(best_v, problem.cap), best_u


def solve_gamma(problem, mode: str = "nagumo", restarts: int = 64, seed: int = 0,
                oracle: bool = True) -> GammaSolveResult:
    if mode not in ("nagumo", "conservative"):
        raise ValueError(f"unknown gamma mode {mode!r}")
    axes = []
    for i in range(problem.n_axes):
        for sign in (1, -1):
            sv, su, nres, nconv = multistart_solve(problem, i, sign, mode, restarts, seed)
            if oracle:
                ov, ou = grid_oracle(problem, i, sign, mode)
            else:
                ov, ou = np.inf, None
            axes.append(AxisSolution(i, sign, sv, ov, su, ou, nres, nconv))
    best = min(axes, key=lambda a: a.value)
    if not best.value >= 0.0:
        raise GammaSolveError(f"negative level {best.value}")
    pt = best.solver_point if best.solver_value <= best.oracle_value else best.oracle_point
    state = None
    if pt is not None:
        q, w = problem.embed(best.axis, best.sign, pt)
        state = (q[0], w[0])
    return GammaSolveResult(best.value, mode, best.axis, best.sign, state, axes)


def solve_gamma_a_nagumo(gains: ControlGains, J, tau_max, **kw) -> GammaSolveResult:
    return solve_gamma(AttitudeLevelSet(gains, J, tau_max), "nagumo", **kw)


def solve_gamma_a_conservative(gains: ControlGains, J, tau_max, **kw) -> float:
    return solve_gamma(AttitudeLevelSet(gains, J, tau_max), "conservative", **kw).gamma
