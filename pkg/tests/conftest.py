import os

# solve the saturation levels in-process instead of trusting a disk cache
os.environ.setdefault("ATTITUDE_ERG_CACHE", "off")

import dataclasses
import math

import numpy as np
import pytest

from attitude_erg import erg, quat
from attitude_erg.scenario_io import load_scenario

_RUNS = {}
ACCEPTANCE = {}


def preset_scenario(name, destabilization=None, gamma_mode=None, **changes):
    scn = load_scenario(name)
    if destabilization is not None:
        changes["nav"] = dataclasses.replace(scn.nav, destabilization=destabilization)
    if gamma_mode is not None:
        changes["dsm"] = dataclasses.replace(scn.dsm, gamma_mode=gamma_mode)
    return erg.resolve_gamma(scn.replace(**changes))


def run_preset(name, **overrides):
    """Closed-loop run of a preset, cached for the whole session: (scenario, log, verdict)."""
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        scn = preset_scenario(name, **overrides)
        _RUNS[key] = (scn, *erg.simulate(scn))
    return _RUNS[key]


def record(number, ok, detail):
    ACCEPTANCE[number] = (ok, detail)


def random_unit(rng, n=3):
    x = rng.standard_normal(n)
    return x / np.linalg.norm(x)


def random_quat(rng):
    return quat.random_quaternions(rng, 1)[0]


def deg(x):
    return math.degrees(x)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
