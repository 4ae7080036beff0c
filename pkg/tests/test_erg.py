import dataclasses
import json
import math

import numpy as np
import pytest

from attitude_erg import erg, navfield, plant, quat
from attitude_erg.constraints import ConstraintSet, ExclusionCone, cone_margins, theta_min
from conftest import preset_scenario, run_preset

D = math.radians
CONE_PRESETS = ["paper-7.2", "paper-7.3"]


def fixed(scn, **changes):
    return scn.replace(**changes)


# governor pieces

def test_governor_derivative_examples():
    scn = preset_scenario("paper-7.1")
    state = plant.RigidBodyState(scn.q0, scn.omega0)
    gov = erg.governor_state(state, scn.q0, scn)
    assert gov.delta == min(gov.delta_e, gov.delta_a) > 0.0
    assert gov.active_constraint == "saturation"
    d = erg.governor_derivative(state, gov, scn.r, scn)
    assert np.linalg.norm(d) > 0.0
    # moving along the derivative reduces the distance to the target
    v1 = quat.normalize(scn.q0 + 1e-6 * d)
    assert quat.angular_distance(v1, scn.r) < quat.angular_distance(scn.q0, scn.r)
    frozen = dataclasses.replace(gov, delta=-1.0)
    assert not erg.governor_derivative(state, frozen, scn.r, scn).any()
    at_target = erg.governor_state(plant.RigidBodyState(scn.r, np.zeros(3)), scn.r, scn)
    assert not erg.governor_derivative(plant.RigidBodyState(scn.r, np.zeros(3)), at_target, scn.r, scn).any()


def test_initialize_v_examples():
    scn = preset_scenario("paper-7.2")
    q0 = quat.axis_angle([0.0, 0.0, 1.0], 0.3)
    assert np.allclose(erg.initialize_v(q0, np.zeros(3), fixed(scn, v0=None)), q0)
    # sensor at half the static margin: pushed out to the margin
    cs = scn.constraints
    a = cs.cones[0].psi + cs.delta / 2
    d = math.cos(a) * cs.h + math.sin(a) * np.array([1.0, 0.0, 0.0])
    q_in = navfield.attitude_for_heading(quat.IDENTITY, cs.cones[0].e, d)
    with pytest.raises(erg.InitializationError, match="saturation"):
        erg.initialize_v(q_in, np.zeros(3), fixed(scn, v0=None))   # 2.5 deg of error asks for ~20 N m
    loose = ConstraintSet(cs.h, cs.cones, 100.0 * cs.tau_max, cs.zeta, cs.delta, cs.eta)
    v = erg.initialize_v(q_in, np.zeros(3), fixed(scn, v0=None, constraints=loose))
    assert theta_min(v, cs)[0] == pytest.approx(cs.delta, abs=1e-9)
    with pytest.raises(erg.InitializationError, match="margin"):
        erg.initialize_v(q0, np.array([0.0, 0.0, 1.0]), fixed(scn, v0=None))


def test_initialize_v_handles_double_cover():
    scn = preset_scenario("paper-7.1")
    v = erg.initialize_v(scn.q0, np.zeros(3), fixed(scn, v0=-scn.q0))
    assert np.allclose(v, scn.q0)


def test_validate_reports_failures():
    scn = preset_scenario("paper-7.2")
    cs = scn.constraints
    twin = ConstraintSet(cs.h, [cs.cones[0], cs.cones[0]], cs.tau_max, cs.zeta, cs.delta, cs.eta)
    checks = {c.name: c for c in erg.validate(fixed(scn, constraints=twin))}
    assert not checks["assumption 1 (cone separation)"].ok
    bad_r = navfield.attitude_for_heading(quat.IDENTITY, cs.cones[0].e, cs.h)
    checks = {c.name: c for c in erg.validate(fixed(scn, r=bad_r))}
    assert not checks["reference in R_zeta"].ok
    with pytest.raises(erg.ScenarioError):
        erg.simulate(fixed(scn, r=bad_r, t_final=1.0))


def test_settling_time():
    t = np.arange(6.0)
    assert erg.settling_time(t, [5, 4, 0.1, 2, 0.1, 0.0], tol=1.0) == 4.0
    assert erg.settling_time(t, np.zeros(6), tol=1.0) == 0.0
    assert erg.settling_time(t, [0, 0, 0, 0, 0, 3], tol=1.0) is None


def test_scenario_validation():
    scn = preset_scenario("paper-7.1")
    with pytest.raises(ValueError):
        fixed(scn, dt=0.0)
    assert scn.n_steps == 60000 and not scn.has_cones


def test_gamma_disk_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("ATTITUDE_ERG_CACHE", str(tmp_path))
    scn = preset_scenario("paper-7.1")
    g = erg.gamma_level(scn.J, scn.gains, scn.constraints.tau_max, "nagumo")
    table = json.loads((tmp_path / "gamma.json").read_text())
    assert list(table.values()) == [g]
    key = next(iter(table))
    table[key] = 0.125
    (tmp_path / "gamma.json").write_text(json.dumps(table))
    assert erg.gamma_level(scn.J, scn.gains, scn.constraints.tau_max, "nagumo") == 0.125


# closed loop

def test_equilibrium_stays_put():
    scn = preset_scenario("paper-7.3")
    scn = fixed(scn, q0=scn.r, v0=scn.r, t_final=20.0)
    log, verdict = erg.simulate(scn)
    assert np.allclose(log.q, scn.r, atol=1e-12) and np.allclose(log.v, scn.r, atol=1e-12)
    assert verdict.max_violation == 0.0 and verdict.final_error < 1e-9


def test_log_schema(tmp_path):
    scn, log, verdict = run_preset("paper-7.1")
    assert log.data.shape == (scn.n_steps // scn.log_stride + 1, len(erg.LOG_COLUMNS))
    assert np.all(np.diff(log.t) > 0.0)
    assert np.allclose(np.diff(log.t), scn.dt * scn.log_stride)
    assert np.allclose(np.linalg.norm(log.q, axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(log.v, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(log.column("Delta"), log.delta)
    path = tmp_path / "run.csv"
    log.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == list(erg.LOG_COLUMNS)
    back = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert np.array_equal(back[np.isfinite(back)], log.data[np.isfinite(log.data)])
    assert set(verdict.as_dict()) >= {"max_violation", "final_error_deg", "settling_time", "min_delta"}


def test_logged_torque_and_margin_columns():
    scn, log, _ = run_preset("paper-7.3")
    for row in log.data[::40]:
        q, w, v = row[1:5], row[5:8], row[11:15]
        qt = plant.attitude_error(q, v)
        assert np.allclose(row[8:11], plant.control_torque(qt, w, scn.gains), atol=1e-12)
        assert row[18] == pytest.approx(theta_min(v, scn.constraints)[0], abs=1e-12)
        assert row[19] == pytest.approx(np.min(cone_margins(q, scn.constraints)), abs=1e-12)


@pytest.mark.parametrize("name,opts", [("paper-7.1", {}), ("paper-7.2", {}),
                                       ("paper-7.2", {"destabilization": False}), ("paper-7.3", {})])
def test_run_invariants(name, opts):
    scn, log, verdict = run_preset(name, **opts)
    assert verdict.status == 0
    assert verdict.max_violation <= erg.VIOLATION_TOL
    assert np.min(log.column("sat_margin")) >= -1e-6
    if scn.has_cones:
        margins = erg.cone_margins_of(log, scn.constraints)
        assert np.min(margins) >= -1e-6
        assert verdict.max_V < 2.0 * scn.gains.kP
        assert np.min(log.column("theta_v")) >= scn.constraints.delta - 1e-6
    assert verdict.min_delta >= -1e-6
    assert verdict.invariants_held


@pytest.mark.parametrize("name", ["paper-7.1", "paper-7.2", "paper-7.3"])
def test_converges_within_horizon(name):
    scn, log, verdict = run_preset(name)
    assert math.degrees(verdict.final_error) < 1.0, (
        f"{name}: final error {math.degrees(verdict.final_error):.3f} deg after {scn.t_final:g} s")


def test_stagnation_without_destabilization():
    scn, log, verdict = run_preset("paper-7.2", destabilization=False)
    assert math.degrees(verdict.final_error) > 30.0
    s1 = navfield.find_saddle(scn.r, scn.constraints)
    assert quat.angular_distance(log.v[-1], s1) < D(0.1)
