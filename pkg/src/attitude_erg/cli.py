"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 runtime or integration
failure, 3 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import erg, navfield
from .gamma import AttitudeLevelSet, solve_gamma
from .scenario_io import PRESETS, ScenarioFormatError, load_scenario, write_presets

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("attitude_erg")


def _load(args):
    scn = load_scenario(args.scenario)
    changes = {}
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    if getattr(args, "t_final", None) is not None:
        changes["t_final"] = args.t_final
    nav = scn.nav
    if getattr(args, "no_destabilization", False):
        nav = dataclasses.replace(nav, destabilization=False)
    if getattr(args, "seed", None) is not None:
        nav = dataclasses.replace(nav, seed=args.seed)
    changes["nav"] = nav
    if getattr(args, "gamma_mode", None) is not None and args.gamma_mode != scn.dsm.gamma_mode:
        changes["dsm"] = dataclasses.replace(scn.dsm, gamma_mode=args.gamma_mode, gamma_a=0.0)
    return scn.replace(**changes)


def cmd_check(args) -> int:
    scn = _load(args)
    print(f"scenario {scn.name}")
    print(f"  [pass] normalization (vectors unit after load)")
    checks = erg.validate(scn)
    for c in checks:
        print(f"  [{'pass' if c.ok else 'FAIL'}] {c.name}: {c.detail}")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_VALIDATION


def cmd_gamma(args) -> int:
    scn = _load(args)
    problem = AttitudeLevelSet(scn.gains, scn.J, scn.constraints.tau_max)
    ok = True
    for mode in ("conservative", "nagumo"):
        res = solve_gamma(problem, mode, restarts=args.restarts, seed=args.seed or 0)
        rep = res.report()
        print(f"{mode}: Gamma = {res.gamma:.10g} (axis {res.active_axis + 1}, sign {res.active_sign:+d}, "
              f"oracle gap {res.oracle_gap:.3g}, {'accepted' if res.accepted else 'REJECTED'})")
        for a in rep["axes"]:
            print(f"    axis {a['axis'] + 1} sign {a['sign']:+d}: solver {a['solver']:.10g}  "
                  f"oracle {a['oracle']:.10g}  converged {a['converged']}/{a['restarts']}")
        if res.argmin_state is not None:
            q, w = res.argmin_state
            print(f"    argmin q~_I = {np.array2string(q, precision=6)}  omega = {np.array2string(w, precision=6)}")
        ok &= res.accepted
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_simulate(args) -> int:
    scn = _load(args)
    try:
        traj, verdict = erg.simulate(scn, backend=args.backend)
    except erg.ScenarioError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out or scn.name)
    csv_path = out.with_suffix(".csv")
    verdict_path = out.with_suffix(".verdict.yaml")
    traj.to_csv(csv_path)
    summary = {"scenario": scn.name, **verdict.as_dict()}
    verdict_path.write_text(yaml.safe_dump(summary, sort_keys=False))
    print(f"wrote {csv_path} ({len(traj)} samples) and {verdict_path}")
    for key in ("invariants_held", "converged", "max_violation", "final_error_deg", "settling_time", "min_delta"):
        print(f"  {key}: {summary[key]}")
    if verdict.status != 0:
        return EXIT_RUNTIME
    return EXIT_OK if verdict.invariants_held else EXIT_VALIDATION


def cmd_field(args) -> int:
    scn = _load(args)
    rows = navfield.sample_field(scn.r, scn.constraints, scn.nav, args.resolution, cone=args.cone)
    np.savetxt(args.out, rows, delimiter=",", header=",".join(navfield.FIELD_COLUMNS), comments="", fmt="%.17g")
    print(f"wrote {args.out} ({rows.shape[0]} samples)")
    return EXIT_OK


def cmd_presets(args) -> int:
    for p in write_presets(args.out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attitude-erg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help=f"scenario file or preset name ({', '.join(PRESETS)})")
        p.add_argument("--gamma-mode", choices=("nagumo", "conservative"))
        p.add_argument("--seed", type=int)
        p.add_argument("--no-destabilization", action="store_true")
        p.set_defaults(func=func)
        return p

    scenario_cmd("check", cmd_check, "validate a scenario")
    p = scenario_cmd("gamma", cmd_gamma, "solve the saturation level sets")
    p.add_argument("--restarts", type=int, default=64)
    p = scenario_cmd("simulate", cmd_simulate, "run the closed loop")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--out", help="output prefix (default: scenario name)")
    p.add_argument("--backend", choices=("cython", "python"))
    p = scenario_cmd("field", cmd_field, "sample the navigation field on a sphere grid")
    p.add_argument("--resolution", type=int, default=24)
    p.add_argument("--cone", type=int, default=0)
    p.add_argument("--out", default="field.csv")
    p = sub.add_parser("presets", help="write the reference scenarios")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, erg.ScenarioError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
