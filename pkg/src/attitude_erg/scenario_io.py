"""YAML scenario files and the built-in presets.

Files carry angles in degrees and quaternions scalar-first. Vectors are
renormalized on load, with a warning when the correction exceeds 1e-6.
"""

from __future__ import annotations

import copy
import logging
import math
from pathlib import Path

import numpy as np
import yaml

from . import navfield, plant
from .constraints import ConstraintSet, ExclusionCone
from .dsm import DsmParams
from .erg import Scenario

log = logging.getLogger(__name__)

NORMALIZE_WARN = 1e-6


class ScenarioFormatError(ValueError):
    """Malformed scenario document (parse error or schema violation)."""


_BASE = {
    "inertia": [918.0, 920.0, 1365.0],
    "gains": {"kP": 918.0, "kD": 3672.0},
    "torque_limits": [1.0, 1.0, 1.0],
    "margins": {"zeta_deg": 10.0, "delta_deg": 5.0, "eta_deg": 5.0},
    "kappa": {"e": 10.0, "a": 10.0, "tau": 10.0, "normalize_tau": False},
    "gamma_mode": "nagumo",
    "initial": {"q0": [1.0, 0.0, 0.0, 0.0], "omega0": [0.0, 0.0, 0.0], "v0": [1.0, 0.0, 0.0, 0.0]},
    "sim": {"dt": 0.01, "t_final": 600.0, "log_stride": 10},
    "toggles": {"destabilization": True, "seed": 0},
}

_TARGET = [0.0, 0.74, 0.37, -0.56]


def _preset(name, heading, cones, reference):
    doc = {"name": name, "heading": heading, "cones": cones, "reference": reference}
    doc.update(copy.deepcopy(_BASE))
    return doc


PRESETS = {
    "paper-7.1": _preset("paper-7.1", [0.0, 0.0, 1.0], [], _TARGET),
    "paper-7.2": _preset("paper-7.2", [0.0, 1.0, 0.0],
                         [{"axis": [1.0, 0.0, 0.0], "half_aperture_deg": 10.0}], [0.0, 0.0, 0.0, 1.0]),
    # second sensor axis: x component -0.4755 (unit norm); see README
    "paper-7.3": _preset("paper-7.3", [0.7208, 0.5237, 0.4540],
                         [{"axis": [0.0, 0.9877, 0.1564], "half_aperture_deg": 10.0},
                          {"axis": [-0.4755, 0.6545, 0.5878], "half_aperture_deg": 10.0}], _TARGET),
}


def _get(doc, path, default=KeyError):
    node = doc
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if default is KeyError:
                raise ScenarioFormatError(f"missing field '{path}'")
            return default
        node = node[key]
    return node


def _vector(doc, path, n, unit=False, default=KeyError, label=None):
    raw = _get(doc, path, default)
    label = label or path
    if raw is None:
        return None
    try:
        x = np.asarray(raw, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ScenarioFormatError(f"'{path}' must be a list of numbers") from None
    if x.size != n or not np.all(np.isfinite(x)):
        raise ScenarioFormatError(f"'{path}' must hold {n} finite numbers, got {raw!r}")
    if unit:
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            raise ScenarioFormatError(f"'{path}' has zero norm")
        if abs(norm - 1.0) > NORMALIZE_WARN:
            log.warning("%s has norm %.6g; renormalized", label, norm)
        x = x / norm
    return x


def _number(doc, path, default=KeyError):
    raw = _get(doc, path, default)
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ScenarioFormatError(f"'{path}' must be a number, got {raw!r}") from None


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario document must be a mapping")
    inertia = np.asarray(_get(doc, "inertia"), dtype=float)
    if inertia.size == 9:
        inertia = inertia.reshape(3, 3)
    elif inertia.size != 3:
        raise ScenarioFormatError("'inertia' must hold 3 diagonal or 9 full entries")
    cones_doc = _get(doc, "cones", [])
    if not isinstance(cones_doc, list):
        raise ScenarioFormatError("'cones' must be a list")
    cones = []
    for k, c in enumerate(cones_doc):
        if not isinstance(c, dict):
            raise ScenarioFormatError(f"cones[{k}] must be a mapping with 'axis' and 'half_aperture_deg'")
        axis = _vector(c, "axis", 3, unit=True, label=f"cones[{k}].axis")
        cones.append(ExclusionCone(axis, math.radians(_number(c, "half_aperture_deg"))))
    zeta = math.radians(_number(doc, "margins.zeta_deg"))
    delta = math.radians(_number(doc, "margins.delta_deg"))
    eta = math.radians(_number(doc, "margins.eta_deg"))
    cset = ConstraintSet(_vector(doc, "heading", 3, unit=True), cones, _vector(doc, "torque_limits", 3),
                         zeta, delta, eta)
    gamma_a = _get(doc, "gamma_a", None)
    dsm = DsmParams(_number(doc, "kappa.e", 10.0), _number(doc, "kappa.a", 10.0), _number(doc, "kappa.tau", 10.0),
                    0.0 if gamma_a is None else float(gamma_a), str(_get(doc, "gamma_mode", "nagumo")))
    destab = _get(doc, "toggles.destabilization", True)
    if not isinstance(destab, bool):
        raise ScenarioFormatError("'toggles.destabilization' must be on/off")
    nav = navfield.NavParams(eta, zeta, delta, int(_number(doc, "toggles.seed", 0)), destab)
    gains = plant.ControlGains(_number(doc, "gains.kP"), _number(doc, "gains.kD"))
    stride = _number(doc, "sim.log_stride", 10)
    if stride != int(stride):
        raise ScenarioFormatError("'sim.log_stride' must be an integer")
    return Scenario(
        J=inertia, gains=gains, constraints=cset, dsm=dsm, nav=nav,
        r=_vector(doc, "reference", 4, unit=True),
        q0=_vector(doc, "initial.q0", 4, unit=True, default=[1.0, 0.0, 0.0, 0.0]),
        omega0=_vector(doc, "initial.omega0", 3, default=[0.0, 0.0, 0.0]),
        v0=_vector(doc, "initial.v0", 4, unit=True, default=None),
        dt=_number(doc, "sim.dt", 0.01), t_final=_number(doc, "sim.t_final", 600.0), log_stride=int(stride),
        normalize_kappa_tau=bool(_get(doc, "kappa.normalize_tau", False)),
        name=str(_get(doc, "name", "scenario")),
    )


def scenario_to_dict(s: Scenario) -> dict:
    lst = lambda x: [float(a) for a in np.ravel(x)]  # noqa: E731
    J = s.J
    inertia = lst(np.diag(J)) if np.count_nonzero(J - np.diag(np.diag(J))) == 0 else lst(J)
    doc = {
        "name": s.name,
        "inertia": inertia,
        "gains": {"kP": float(s.gains.kP), "kD": float(s.gains.kD)},
        "torque_limits": lst(s.constraints.tau_max),
        "heading": lst(s.constraints.h),
        "cones": [{"axis": lst(c.e), "half_aperture_deg": math.degrees(c.psi)} for c in s.constraints.cones],
        "margins": {"zeta_deg": math.degrees(s.constraints.zeta), "delta_deg": math.degrees(s.constraints.delta),
                    "eta_deg": math.degrees(s.constraints.eta)},
        "kappa": {"e": s.dsm.kappa_e, "a": s.dsm.kappa_a, "tau": s.dsm.kappa_tau,
                  "normalize_tau": bool(s.normalize_kappa_tau)},
        "gamma_mode": s.dsm.gamma_mode,
        "reference": lst(s.r),
        "initial": {"q0": lst(s.q0), "omega0": lst(s.omega0), "v0": None if s.v0 is None else lst(s.v0)},
        "sim": {"dt": float(s.dt), "t_final": float(s.t_final), "log_stride": int(s.log_stride)},
        "toggles": {"destabilization": bool(s.nav.destabilization), "seed": int(s.nav.seed)},
    }
    if s.dsm.gamma_a > 0.0:
        doc["gamma_a"] = float(s.dsm.gamma_a)
    return doc


def dump_document(doc: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def load_document(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioFormatError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from None


def load_scenario(path_or_preset) -> Scenario:
    """Load a file, or a preset when the argument names one."""
    key = str(path_or_preset)
    if key in PRESETS and not Path(key).exists():
        return scenario_from_dict(copy.deepcopy(PRESETS[key]))
    return scenario_from_dict(load_document(path_or_preset))


def write_presets(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, doc in PRESETS.items():
        p = directory / f"{name}.yaml"
        dump_document(doc, p)
        paths.append(p)
    return paths
