import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attitude_erg import erg, kernels, plant, quat
from attitude_erg.constraints import ConstraintSet, ExclusionCone
from attitude_erg.dsm import (DsmParams, delta_a, delta_e, delta_total, gamma_e, gamma_e_from_theta,
                              in_invariant_set, normalized_kappa_tau)
from attitude_erg.gamma import DoubleIntegratorLevelSet, solve_gamma

D = math.radians
J = np.diag([918.0, 920.0, 1365.0])
GAINS = plant.ControlGains(918.0, 3672.0)
ONES = np.ones(3)
ZERO3 = np.zeros(3)
CS1 = ConstraintSet([0.0, 1.0, 0.0], [ExclusionCone([1.0, 0.0, 0.0], D(10))], ONES, D(10), D(5), D(5))
NOCONE = ConstraintSet([0.0, 1.0, 0.0], [], ONES, D(10), D(5), D(5))


def reference_gamma(mode):
    return erg.gamma_report(J, GAINS, ONES, mode)


def line_scan(kP, kD, c, mode, n=200_001):
    """Brute-force level on the upper torque face of the scalar fixture, zooming twice."""
    lo, hi = -10.0 * c * (1.0 + kD / kP), 10.0 * c * (1.0 + kD / kP)
    for _ in range(3):
        y = np.linspace(lo, hi, n)
        x = -(c + kD * y) / kP               # tau = -kP x - kD y = c
        V = 0.5 * kP * x * x + 0.5 * y * y
        if mode == "nagumo":
            V = np.where(-kP * y - kD * c >= 0.0, V, np.inf)
        k = int(np.argmin(V))
        step = (hi - lo) / (n - 1)
        lo, hi = y[k] - 2.0 * step, y[k] + 2.0 * step
    return float(V[k])


# gamma_e / delta_e

def test_gamma_e_examples():
    assert gamma_e_from_theta(0.0, 918.0) == 0.0
    assert gamma_e_from_theta(D(80), 918.0) == pytest.approx(1836.0 * (1.0 - math.cos(D(40))))
    assert gamma_e(quat.IDENTITY, CS1, GAINS) == pytest.approx(429.5, abs=0.2)
    assert gamma_e(quat.IDENTITY, NOCONE, GAINS) == pytest.approx(2.0 * 918.0)
    assert gamma_e_from_theta(-0.3, 918.0) == 0.0


def test_gamma_e_below_unwinding_level(rng):
    for v in quat.random_quaternions(rng, 500):
        assert gamma_e(v, CS1, GAINS) < 2.0 * GAINS.kP


def test_delta_e_examples():
    p = DsmParams()
    assert delta_e(quat.IDENTITY, ZERO3, quat.IDENTITY, CS1, GAINS, J, p) == pytest.approx(4295, rel=1e-3)
    # spin the body until V equals the cone level
    ge = gamma_e(quat.IDENTITY, CS1, GAINS)
    w = np.array([math.sqrt(2.0 * ge / 918.0), 0.0, 0.0])
    assert delta_e(quat.IDENTITY, w, quat.IDENTITY, CS1, GAINS, J, p) == pytest.approx(0.0, abs=1e-9)
    assert delta_e(quat.IDENTITY, 1.01 * w, quat.IDENTITY, CS1, GAINS, J, p) < 0.0


# delta_a / delta_total / invariant set

def test_delta_a_examples():
    p = DsmParams(gamma_a=2.0)
    assert delta_a(quat.IDENTITY, ZERO3, GAINS, J, ONES, p) == pytest.approx(10.0)
    q = np.array([math.sqrt(1.0 - (1.0 / 918.0) ** 2), -1.0 / 918.0, 0.0, 0.0])   # tau_1 = 1
    assert delta_a(q, ZERO3, GAINS, J, ONES, p) == pytest.approx(0.0, abs=1e-12)
    w = np.array([0.0, 0.0, math.sqrt(2.0 * 2.0 / 1365.0)])
    p_big = DsmParams(gamma_a=2.0, kappa_tau=1e6)
    assert delta_a(quat.IDENTITY, w, GAINS, J, 1e6 * ONES, p_big) == pytest.approx(0.0, abs=1e-9)


def test_delta_total_examples():
    p = DsmParams(gamma_a=2.0)
    de = delta_e(quat.IDENTITY, ZERO3, quat.IDENTITY, NOCONE, GAINS, J, p)
    da = delta_a(quat.IDENTITY, ZERO3, GAINS, J, ONES, p)
    assert delta_total(quat.IDENTITY, ZERO3, quat.IDENTITY, NOCONE, GAINS, J, p) == min(de, da) == da
    assert delta_total(quat.IDENTITY, ZERO3, quat.IDENTITY, NOCONE, GAINS, J, p, saturation=False) == de
    # unbounded actuators: only the cone term is left
    free = ConstraintSet(CS1.h, CS1.cones, np.full(3, np.inf), CS1.zeta, CS1.delta, CS1.eta)
    p_inf = DsmParams(gamma_a=np.inf)
    assert delta_total(quat.IDENTITY, ZERO3, quat.IDENTITY, free, GAINS, J, p_inf) == \
        delta_e(quat.IDENTITY, ZERO3, quat.IDENTITY, free, GAINS, J, p_inf)
    # both negative: the more negative one wins
    w = np.array([2.0, 0.0, 0.0])
    d = delta_total(quat.IDENTITY, w, quat.IDENTITY, CS1, GAINS, J, p)
    assert d == min(delta_e(quat.IDENTITY, w, quat.IDENTITY, CS1, GAINS, J, p),
                    delta_a(quat.IDENTITY, w, GAINS, J, ONES, p)) < 0.0


def test_invariant_set_examples():
    assert in_invariant_set(quat.IDENTITY, ZERO3, GAINS, J, ONES, 0.5)
    w = np.array([math.sqrt(2.0 * 0.5 / 918.0), 0.0, 0.0])
    assert in_invariant_set(quat.IDENTITY, w * (1.0 - 1e-12), GAINS, J, 1e3 * ONES, 0.5)
    assert not in_invariant_set(quat.IDENTITY, [1.0 / 3672.0 * 1.001, 0.0, 0.0], GAINS, J, ONES, 10.0)


def test_params_validation():
    with pytest.raises(ValueError):
        DsmParams(kappa_e=0.0)
    with pytest.raises(ValueError):
        DsmParams(gamma_mode="other")
    assert normalized_kappa_tau(10.0, GAINS, ONES) == pytest.approx(10.0 * 1836.0 / math.sqrt(3.0))


small_quat = arrays(float, 3, elements=st.floats(-0.05, 0.05, allow_nan=False))
small_rate = arrays(float, 3, elements=st.floats(-1e-3, 1e-3, allow_nan=False))


@given(small_quat, small_rate)
def test_delta_a_symmetric_in_torque_sign(qi, w):
    # (q_R, -q_I), -w flips tau and keeps V
    q = np.r_[math.sqrt(1.0 - qi @ qi), qi]
    qm = np.r_[q[0], -qi]
    p = DsmParams(gamma_a=0.48)
    assert delta_a(q, w, GAINS, J, ONES, p) == pytest.approx(delta_a(qm, -w, GAINS, J, ONES, p), abs=1e-12)


# level-set fixture

@pytest.mark.parametrize("kP,kD,c", [(2.0, 1.5, 1.0), (918.0, 3672.0, 1.0), (0.3, 4.0, 2.5)])
def test_fixture_closed_forms(kP, kD, c):
    fx = DoubleIntegratorLevelSet(kP, kD, c)
    for mode in ("conservative", "nagumo"):
        assert fx.closed_form(mode) == pytest.approx(line_scan(kP, kD, c, mode), rel=1e-5)
        res = solve_gamma(fx, mode)
        assert res.accepted
        assert res.gamma == pytest.approx(fx.closed_form(mode), rel=1e-6)
    assert fx.closed_form("nagumo") > fx.closed_form("conservative")


def test_fixture_quadratic_scaling():
    base = DoubleIntegratorLevelSet(2.0, 1.5, 1.0)
    for s in (0.5, 3.0):
        scaled = DoubleIntegratorLevelSet(2.0, 1.5, s)
        for mode in ("conservative", "nagumo"):
            assert scaled.closed_form(mode) == pytest.approx(s * s * base.closed_form(mode), rel=1e-12)
            assert solve_gamma(scaled, mode).gamma == pytest.approx(s * s * base.closed_form(mode), rel=1e-6)


def test_fixture_monotone_in_torque_bound():
    vals = [solve_gamma(DoubleIntegratorLevelSet(0.05, 1.0, c), "conservative", oracle=False).gamma
            for c in (0.5, 1.0, 2.0, 4.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_fixture_rejects_unknown_mode():
    with pytest.raises(ValueError):
        solve_gamma(DoubleIntegratorLevelSet(1.0, 1.0, 1.0), "other")


# attitude level sets (solved once per session)

@pytest.mark.slow
def test_reference_levels_ordered_and_accepted():
    nag, con = reference_gamma("nagumo"), reference_gamma("conservative")
    assert nag.accepted and con.accepted
    assert con.gamma <= nag.gamma
    assert nag.gamma / con.gamma > 100.0
    assert nag.gamma == min(a.value for a in nag.axes)
    rep = nag.report()
    assert {"gamma", "axes", "restarts", "oracle_gap", "argmin_qtilde_I", "argmin_omega"} <= set(rep)
    assert rep["restarts"] >= 6 * 64


@pytest.mark.slow
def test_conservative_level_is_first_torque_contact():
    # below the level every state keeps its torque inside the bounds
    g = reference_gamma("conservative").gamma
    q, w = reference_gamma("conservative").argmin_state
    tau = -GAINS.kP * q - GAINS.kD * w
    assert np.max(np.abs(tau)) == pytest.approx(1.0, abs=1e-6)
    qt = np.r_[math.sqrt(1.0 - q @ q), q]
    assert plant.lyapunov(qt, w, GAINS, J) == pytest.approx(g, rel=1e-6)


@pytest.mark.slow
def test_returnability_and_recursive_feasibility(rng):
    g = reference_gamma("nagumo").gamma
    p = DsmParams(gamma_a=g)
    cs = CS1
    core = kernels.get_backend()
    for _ in range(5):
        while True:
            v = quat.random_quaternions(rng, 1)[0]
            if erg.theta_min(v, cs)[0] >= cs.delta:
                break
        qi = rng.normal(0.0, 0.004, 3)
        qt = np.r_[math.sqrt(1.0 - qi @ qi), qi]
        w = -(rng.uniform(-0.5, 0.5, 3) + GAINS.kP * qi) / GAINS.kD
        if delta_total(qt, w, v, cs, GAINS, J, p) < 0.0:
            continue
        P, _ = kernels.pack_model(J, GAINS, cs, p, v)
        rows = np.asarray(core.plant_rollout(P, quat.quat_product(qt, v), w, v, 0.01, 20000))
        R = np.array([quat.rotation_matrix(q) for q in rows[:, 1:5]])
        sens = np.einsum("j,njk,k->n", cs.h, R, cs.cones[0].e)
        assert np.all(np.arccos(np.clip(sens, -1, 1)) - cs.cones[0].psi >= -1e-9)
        assert np.max(np.abs(rows[:, 8:11])) <= 1.0 + 1e-9
        tail = [delta_total(plant.attitude_error(r[1:5], v), r[5:8], v, cs, GAINS, J, p) for r in rows[-1000:]]
        assert min(tail) > 0.1
