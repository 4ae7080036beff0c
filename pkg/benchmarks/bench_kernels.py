"""Compare the compiled and pure-Python kernels on the reference scenarios.

Usage: python benchmarks/bench_kernels.py [--steps N] [--repeat K]
"""

import argparse
import time

import numpy as np

from attitude_erg import kernels
from attitude_erg.erg import effective_dsm, initialize_v, resolve_gamma
from attitude_erg.scenario_io import load_scenario


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000, help="closed-loop steps per run")
    ap.add_argument("--flow-steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':<28}{'backend':<10}{'seconds':>10}{'steps/s':>14}")
    for preset in ("paper-7.1", "paper-7.2", "paper-7.3"):
        scn = resolve_gamma(load_scenario(preset))
        P, C = kernels.pack_model(scn.J, scn.gains, scn.constraints, effective_dsm(scn), scn.r)
        v0 = initialize_v(scn.q0, scn.omega0, scn)
        finals = {}
        for name in backends:
            core = kernels.get_backend(name)
            sec, out = _time(lambda: core.simulate(P, C, scn.q0, scn.omega0, v0, scn.dt, args.steps, 10,
                                                   seed=scn.nav.seed, destabilization=scn.nav.destabilization),
                             args.repeat)
            finals[name] = out[0][-1]
            print(f"{preset + ' simulate':<28}{name:<10}{sec:>10.4f}{args.steps / sec:>14.0f}")
        if len(finals) == 2:
            a, b = finals["cython"], finals["python"]
            fin = np.isfinite(a) & np.isfinite(b)
            diff = np.max(np.abs(a[fin] - b[fin])) if np.array_equal(fin, np.isfinite(b)) else np.inf
            print(f"{'':<28}max |cython - python| on final row: {diff:.2e}")
        for name in backends:
            core = kernels.get_backend(name)
            sec, _ = _time(lambda: core.nav_flow(P, C, v0, 0.01, args.flow_steps, 1e-9), args.repeat)
            print(f"{preset + ' nav_flow':<28}{name:<10}{sec:>10.4f}{args.flow_steps / sec:>14.0f}")


if __name__ == "__main__":
    main()
