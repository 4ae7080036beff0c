import math

import numpy as np
import pytest

from attitude_erg import quat
from attitude_erg.constraints import (NO_CONE, ConstraintSet, ExclusionCone, check_assumption1, cone_margin,
                                      cone_margins, in_R_delta, in_R_zeta, saturation_margin, theta_min)
from attitude_erg.navfield import attitude_for_heading

D = math.radians
ONES = np.ones(3)


def unit(x):
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x)


def single_cone(psi=D(10.0)):
    return ConstraintSet([0.0, 1.0, 0.0], [ExclusionCone([1.0, 0.0, 0.0], psi)], ONES, D(10), D(5), D(5))


def two_cone(zeta=D(10.0)):
    cones = [ExclusionCone(unit([0.0, 0.9877, 0.1564]), D(10)), ExclusionCone(unit([-0.4755, 0.6545, 0.5878]), D(10))]
    return ConstraintSet(unit([0.7208, 0.5237, 0.4540]), cones, ONES, zeta, min(D(5), 0.5 * zeta), min(D(5), 0.5 * zeta))


def test_construction_validation():
    with pytest.raises(ValueError):
        ExclusionCone([1.0, 1.0, 0.0], D(10))
    with pytest.raises(ValueError):
        ExclusionCone([1.0, 0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        ConstraintSet([0.0, 0.0, 1.0], [], [1.0, 0.0, 1.0], D(10), D(5), D(5))
    with pytest.raises(ValueError):
        ConstraintSet([0.0, 0.0, 1.0], [], ONES, D(5), D(10), D(1))
    # eta may equal delta
    ConstraintSet([0.0, 0.0, 1.0], [], ONES, D(10), D(5), D(5))


def test_cone_margin_examples():
    cs = single_cone()
    assert math.degrees(cone_margin(quat.IDENTITY, cs, 0)) == pytest.approx(80.0)
    v = attitude_for_heading(quat.IDENTITY, cs.cones[0].e, cs.h)
    assert math.degrees(cone_margin(v, cs, 0)) == pytest.approx(-10.0, abs=1e-6)


def test_orthogonal_sensor_with_tiny_cone():
    cs = single_cone(psi=1e-300)
    assert cone_margin(quat.IDENTITY, cs, 0) == pytest.approx(math.pi / 2)


def test_theta_min_examples():
    cs = single_cone()
    th, i = theta_min(quat.IDENTITY, cs)
    assert (math.degrees(th), i) == (pytest.approx(80.0), 0)
    twin = ConstraintSet(cs.h, [cs.cones[0], cs.cones[0]], ONES, cs.zeta, cs.delta, cs.eta)
    assert theta_min(quat.IDENTITY, twin)[1] == 0
    empty = ConstraintSet(cs.h, [], ONES, cs.zeta, cs.delta, cs.eta)
    assert theta_min(quat.IDENTITY, empty) == (math.inf, NO_CONE)
    assert cone_margins(quat.IDENTITY, empty).size == 0


def test_region_membership():
    cs = single_cone()
    assert in_R_delta(quat.IDENTITY, cs) and in_R_zeta(quat.IDENTITY, cs)
    e, h = cs.cones[0].e, cs.h
    # sensor a hair outside the delta boundary
    a = cs.cones[0].psi + cs.delta + 1e-12
    v = attitude_for_heading(quat.IDENTITY, e, math.cos(a) * h + math.sin(a) * np.array([1.0, 0.0, 0.0]))
    assert theta_min(v, cs)[0] == pytest.approx(cs.delta, abs=1e-10)
    assert in_R_delta(v, cs) and not in_R_zeta(v, cs)
    inside = attitude_for_heading(quat.IDENTITY, e, h)
    assert not in_R_delta(inside, cs)


def test_assumption1_examples():
    ok, rep = check_assumption1(single_cone())
    assert ok and rep == []
    ok, rep = check_assumption1(two_cone())
    assert ok
    assert rep[0].dot == pytest.approx(0.7384, abs=1e-4)
    assert rep[0].threshold == pytest.approx(math.cos(D(40)), abs=1e-12)
    c = ExclusionCone([1.0, 0.0, 0.0], D(10))
    ok, rep = check_assumption1(ConstraintSet([0.0, 1.0, 0.0], [c, c], ONES, D(10), D(5), D(5)))
    assert not ok and rep[0].dot == 1.0


def test_assumption1_monotone_in_zeta(rng):
    for _ in range(200):
        cones = [ExclusionCone(unit(rng.standard_normal(3)), rng.uniform(D(2), D(30))) for _ in range(3)]
        zeta = rng.uniform(D(2), D(30))
        cs = ConstraintSet([0.0, 0.0, 1.0], cones, ONES, zeta, zeta / 2, zeta / 4)
        if check_assumption1(cs)[0]:
            for z in (0.0, 0.5 * zeta, 0.99 * zeta):
                assert check_assumption1(cs, z)[0]


def test_saturation_margin_examples():
    assert saturation_margin(np.zeros(3), ONES) == 1.0
    assert saturation_margin([1.0, 0.0, 0.0], ONES) == 0.0
    assert saturation_margin([1.2, 0.0, 0.0], ONES) == pytest.approx(-0.2)
    assert saturation_margin([0.0, -1.5, 0.0], single_cone()) == pytest.approx(-0.5)


def test_theta_min_is_lipschitz(rng):
    cs = two_cone()
    for _ in range(1000):
        v1 = quat.random_quaternions(rng, 1)[0]
        v2 = quat.quat_product(quat.axis_angle(rng.standard_normal(3), rng.uniform(0.0, 0.5)), v1)
        assert abs(theta_min(v1, cs)[0] - theta_min(v2, cs)[0]) <= quat.angular_distance(v1, v2) + 1e-9


def test_region_nesting(rng):
    cs = two_cone()
    for v in quat.random_quaternions(rng, 2000):
        if in_R_zeta(v, cs):
            assert in_R_delta(v, cs)
        if in_R_delta(v, cs):
            assert np.all(cone_margins(v, cs) > 0.0)
            # equivalent inner-product form
            R = quat.rotation_matrix(v)
            for c in cs.cones:
                assert cs.h @ R @ c.e <= math.cos(c.psi + cs.delta) + 1e-12
