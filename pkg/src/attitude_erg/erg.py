"""Closed-loop explicit reference governor.

The plant runs the PD law toward an auxiliary reference ``v``; the governor
moves ``v`` along the navigation field at a speed set by the safety margin,
``dv/dt = max(delta, 0) E(v) rho(v, r)``.

Time stepping splits each step in two. First the governor advances ``v``
with the plant frozen, using backward-Euler substeps along the field
direction so that ``delta`` never goes negative. Then the plant takes an RK4
step with ``v`` frozen. The splitting is needed because the margin relaxes
on a time scale of roughly ``1 / (kappa_tau kP)``, far below any useful
explicit step.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gamma as gamma_solver
from . import kernels, navfield, plant, quat
from .constraints import NO_CONE, ConstraintSet, check_assumption1, cone_margins, theta_min
from .dsm import DsmParams, delta_a, delta_e, normalized_kappa_tau

LOG_COLUMNS = (
    "t", "q_R", "q_1", "q_2", "q_3", "omega_1", "omega_2", "omega_3",
    "tau_1", "tau_2", "tau_3", "v_R", "v_1", "v_2", "v_3",
    "Delta", "Delta_e", "Delta_a", "theta_v", "min_cone_margin_q", "sat_margin",
)

VIOLATION_TOL = 1e-6
SETTLE_TOL = math.radians(1.0)


class ScenarioError(ValueError):
    """A scenario fails one of its load-time checks."""


class InitializationError(ScenarioError):
    """No admissible initial auxiliary reference exists."""


@dataclass
class Scenario:
    J: np.ndarray
    gains: plant.ControlGains
    constraints: ConstraintSet
    dsm: DsmParams
    nav: navfield.NavParams
    r: np.ndarray
    q0: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())
    omega0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v0: np.ndarray | None = None
    dt: float = 0.01
    t_final: float = 600.0
    log_stride: int = 10
    normalize_kappa_tau: bool = False
    name: str = "scenario"

    def __post_init__(self):
        self.J = plant.inertia_matrix(self.J)
        self.r = quat.normalize(self.r)
        self.q0 = quat.normalize(self.q0)
        self.omega0 = np.asarray(self.omega0, dtype=float)
        if self.v0 is not None:
            self.v0 = quat.normalize(self.v0)
        if not (self.dt > 0.0 and self.t_final > 0.0):
            raise ScenarioError("dt and t_final must be positive")
        if int(self.log_stride) < 1:
            raise ScenarioError("log_stride must be a positive integer")
        self.log_stride = int(self.log_stride)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def has_cones(self) -> bool:
        return len(self.constraints.cones) > 0

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class GovernorState:
    v: np.ndarray
    delta: float
    delta_e: float
    delta_a: float
    active_constraint: str


@dataclass
class TrajectoryLog:
    data: np.ndarray
    columns: tuple = LOG_COLUMNS

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self):
        return self.data[:, 0]

    @property
    def q(self):
        return self.data[:, 1:5]

    @property
    def omega(self):
        return self.data[:, 5:8]

    @property
    def tau(self):
        return self.data[:, 8:11]

    @property
    def v(self):
        return self.data[:, 11:15]

    @property
    def delta(self):
        return self.data[:, 15]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.data, delimiter=",", header=",".join(self.columns), comments="", fmt="%.17g")


@dataclass
class Verdict:
    max_violation: float
    final_error: float
    settling_time: float | None
    min_delta: float
    max_V: float
    min_theta_v: float
    max_abs_tau: float
    status: int
    steps: int
    gamma_a: float
    unwinding_ok: bool
    reference_admissible: bool

    @property
    def converged(self) -> bool:
        return self.final_error < SETTLE_TOL

    @property
    def invariants_held(self) -> bool:
        return (self.status == 0 and self.max_violation <= VIOLATION_TOL and self.min_delta >= -VIOLATION_TOL
                and self.unwinding_ok and self.reference_admissible)

    def as_dict(self) -> dict:
        return {
            "invariants_held": self.invariants_held,
            "converged": self.converged,
            "max_violation": float(self.max_violation),
            "final_error_deg": math.degrees(self.final_error),
            "settling_time": None if self.settling_time is None else float(self.settling_time),
            "min_delta": float(self.min_delta),
            "max_V": float(self.max_V),
            "min_theta_v_deg": math.degrees(self.min_theta_v) if math.isfinite(self.min_theta_v) else None,
            "max_abs_tau": float(self.max_abs_tau),
            "gamma_a": float(self.gamma_a),
            "status": int(self.status),
            "steps": int(self.steps),
        }


@functools.lru_cache(maxsize=32)
def _cached_gamma(kP, kD, J, tau_max, mode, restarts, seed):
    problem = gamma_solver.AttitudeLevelSet(plant.ControlGains(kP, kD), np.array(J).reshape(3, 3), np.array(tau_max))
    return gamma_solver.solve_gamma(problem, mode, restarts=restarts, seed=seed)


def gamma_report(J, gains: plant.ControlGains, tau_max, mode: str, restarts: int = 64, seed: int = 0):
    """Solve (once per process) the saturation level set for ``mode``."""
    J = plant.inertia_matrix(J)
    return _cached_gamma(float(gains.kP), float(gains.kD), tuple(J.ravel()), tuple(np.asarray(tau_max, float)),
                         mode, restarts, seed)


def _cache_file() -> Path | None:
    root = os.environ.get("ATTITUDE_ERG_CACHE")
    if root == "off":
        return None
    base = Path(root) if root else Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "attitude_erg"
    return base / "gamma.json"


def gamma_level(J, gains: plant.ControlGains, tau_max, mode: str) -> float:
    """Accepted level for ``mode``, memoized on disk across processes.

    Only values the oracle accepted are stored. Set ``ATTITUDE_ERG_CACHE=off``
    to disable the file, or to a directory to relocate it.
    """
    J = plant.inertia_matrix(J)
    key = json.dumps([mode, float(gains.kP), float(gains.kD), [float(x) for x in J.ravel()],
                      [float(x) for x in np.ravel(tau_max)]])
    path = _cache_file()
    table = {}
    if path is not None and path.exists():
        try:
            table = json.loads(path.read_text())
        except (OSError, ValueError):
            table = {}
        if key in table:
            return float(table[key])
    res = gamma_report(J, gains, tau_max, mode)
    if not res.accepted:
        raise gamma_solver.GammaSolveError(f"{mode} level rejected by the grid oracle (gap {res.oracle_gap:.3g})")
    if path is not None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            table[key] = res.gamma
            path.write_text(json.dumps(table, indent=1))
        except OSError:
            pass
    return res.gamma


def resolve_gamma(scenario: Scenario) -> Scenario:
    """Fill in ``gamma_a`` for the scenario's mode unless it was given."""
    if scenario.dsm.gamma_a > 0.0:
        return scenario
    g = gamma_level(scenario.J, scenario.gains, scenario.constraints.tau_max, scenario.dsm.gamma_mode)
    return scenario.replace(dsm=dataclasses.replace(scenario.dsm, gamma_a=g))


def effective_dsm(scenario: Scenario) -> DsmParams:
    if not scenario.normalize_kappa_tau:
        return scenario.dsm
    k = normalized_kappa_tau(scenario.dsm.kappa_tau, scenario.gains, scenario.constraints.tau_max)
    return dataclasses.replace(scenario.dsm, kappa_tau=k)


def governor_state(state: plant.RigidBodyState, v, scenario: Scenario) -> GovernorState:
    v = quat.normalize(v)
    params = effective_dsm(scenario)
    qt = plant.attitude_error(state.q, v)
    de = delta_e(qt, state.omega, v, scenario.constraints, scenario.gains, scenario.J, params)
    da = delta_a(qt, state.omega, scenario.gains, scenario.J, scenario.constraints.tau_max, params)
    if da < de:
        tag = "saturation"
    else:
        idx = theta_min(v, scenario.constraints)[1]
        tag = "none" if idx == NO_CONE else f"cone {idx}"
    return GovernorState(v, min(de, da), de, da, tag)


def governor_derivative(state: plant.RigidBodyState, gov: GovernorState, r, scenario: Scenario) -> np.ndarray:
    """``max(delta, 0) rho(v, r)``: the reference freezes whenever the margin is used up."""
    if not gov.delta > 0.0:
        return np.zeros(4)
    s = navfield.field(gov.v, r, scenario.constraints, scenario.nav)
    return gov.delta * s.rho_total


def _project_out(v, cset: ConstraintSet, target: float, max_iter: int = 8):
    """Rotate ``v`` along the repulsion direction until every cone margin is at least ``target``."""
    for _ in range(max_iter):
        theta, idx = theta_min(v, cset)
        if idx == NO_CONE or theta >= target - 1e-12:
            return v
        n = navfield.repulsion_direction(v, cset.h, cset.cones[idx].e, seed=0)
        v = quat.quat_product(quat.axis_angle(n, target - theta + 1e-12), v)
    return v


def initialize_v(q0, omega0, scenario: Scenario) -> np.ndarray:
    """Initial auxiliary reference: explicit ``v0`` when admissible, else ``q0`` pushed into the admissible set."""
    q0 = quat.normalize(q0)
    omega0 = np.asarray(omega0, dtype=float)
    cset = scenario.constraints
    state = plant.RigidBodyState(q0, omega0)
    candidates = []
    if scenario.v0 is not None:
        candidates.append(("explicit v0", scenario.v0))
    candidates.append(("projected q0", _project_out(q0, cset, cset.delta)))
    reasons = []
    for label, v in candidates:
        if quat.quat_product(q0, quat.conjugate(v), renormalize=False)[0] < 0.0:
            v = -v
        theta = theta_min(v, cset)[0]
        if theta < cset.delta - 1e-9:
            reasons.append(f"{label}: cone margin {math.degrees(theta):.4g} deg below delta")
            continue
        gov = governor_state(state, v, scenario)
        if gov.delta < 0.0:
            part = "delta_a (saturation / energy)" if gov.delta_a < gov.delta_e else "delta_e (cone energy)"
            reasons.append(f"{label}: margin {gov.delta:.4g} < 0, limited by {part}")
            continue
        return v
    raise InitializationError("no admissible initial reference: " + "; ".join(reasons))


def validate(scenario: Scenario) -> list[Check]:
    """Load-time checks; solves for ``gamma_a`` first when the scenario does not carry it."""
    scenario = resolve_gamma(scenario)
    cset = scenario.constraints
    checks = []
    ok, pairs = check_assumption1(cset)
    detail = ", ".join(f"e{p.i + 1}.e{p.j + 1}={p.dot:.4f} {'<' if p.ok else '>='} {p.threshold:.4f}" for p in pairs)
    checks.append(Check("assumption 1 (cone separation)", ok, detail or "single or no cone"))
    th = theta_min(scenario.r, cset)[0]
    checks.append(Check("reference in R_zeta", th >= cset.zeta,
                        "no cones" if not math.isfinite(th) else f"margin {math.degrees(th):.4f} deg, "
                        f"zeta {math.degrees(cset.zeta):.4f} deg"))
    try:
        v0 = initialize_v(scenario.q0, scenario.omega0, scenario)
        gov = governor_state(plant.RigidBodyState(scenario.q0, scenario.omega0), v0, scenario)
        checks.append(Check("initial condition", True, f"v0={np.array2string(v0, precision=6)}, "
                            f"Delta={gov.delta:.6g}"))
    except ScenarioError as exc:
        checks.append(Check("initial condition", False, str(exc)))
    return checks


def settling_time(t, error, tol: float = SETTLE_TOL) -> float | None:
    """First sample time after which ``error`` stays below ``tol``."""
    bad = np.nonzero(~(np.asarray(error) < tol))[0]
    if bad.size == 0:
        return float(t[0])
    if bad[-1] + 1 >= len(t):
        return None
    return float(t[bad[-1] + 1])


def simulate(scenario: Scenario, backend: str | None = None, check: bool = True) -> tuple[TrajectoryLog, Verdict]:
    """Run the closed loop and summarize it.

    Raises :class:`ScenarioError` when a load-time check fails. A blow-up of
    the integration does not raise: the log stops at the last finite sample
    and the verdict carries ``status == 2``.
    """
    scenario = resolve_gamma(scenario)
    if check:
        failed = [c for c in validate(scenario) if not c.ok]
        if failed:
            raise ScenarioError("; ".join(f"{c.name}: {c.detail}" for c in failed))
    v0 = initialize_v(scenario.q0, scenario.omega0, scenario)
    P, C = kernels.pack_model(scenario.J, scenario.gains, scenario.constraints, effective_dsm(scenario), scenario.r)
    core = kernels.get_backend(backend)
    data, stats, status, steps = core.simulate(
        P, C, scenario.q0, scenario.omega0, v0, scenario.dt, scenario.n_steps, scenario.log_stride,
        seed=scenario.nav.seed, destabilization=scenario.nav.destabilization)
    log = TrajectoryLog(np.asarray(data))
    err = np.array([quat.angular_distance(q, scenario.r) for q in log.q])
    violation = max(0.0, -stats["min_sat_margin"], -stats["min_cone_margin_q"])
    verdict = Verdict(
        max_violation=violation,
        final_error=float(err[-1]),
        settling_time=settling_time(log.t, err),
        min_delta=stats["min_delta"],
        max_V=stats["max_V"],
        min_theta_v=stats["min_theta_v"],
        max_abs_tau=stats["max_abs_tau"],
        status=int(status),
        steps=int(steps),
        gamma_a=scenario.dsm.gamma_a,
        unwinding_ok=(not scenario.has_cones) or stats["max_V"] < 2.0 * scenario.gains.kP,
        reference_admissible=stats["min_theta_v"] >= scenario.constraints.delta - VIOLATION_TOL,
    )
    return log, verdict


def cone_margins_of(log: TrajectoryLog, cset: ConstraintSet) -> np.ndarray:
    """Per-cone margins of the actual attitude at every log sample, shape ``(n, cones)``."""
    return np.array([cone_margins(q, cset) for q in log.q]).reshape(len(log), -1)
