"""Backend selection for the hot loops.

The compiled Cython core is used when it imports; otherwise the pure-Python
twin in ``_core_py`` takes over. Set ``ATTITUDE_ERG_BACKEND=python`` to force
the fallback.

Packed parameter vector ``P`` (length 37)::

    0:9    J, row-major          9:18   inverse of J
    18     kP                    19     kD
    20:23  tau_max               23:26  heading h
    26     zeta                  27     delta          28  eta
    29     kappa_e               30     kappa_a        31  kappa_tau
    32     gamma_a               33:37  target r

Cones travel separately as an ``(n, 4)`` array of ``(e, psi)`` rows.
"""

from __future__ import annotations

import os

import numpy as np

from . import _core_py

try:
    from . import _core as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

PARAM_LEN = 37


def available_backends() -> list[str]:
    return (["cython"] if _compiled is not None else []) + ["python"]


def get_backend(name: str | None = None):
    """Kernel module by name; ``None`` picks the compiled one when present."""
    name = name or os.environ.get("ATTITUDE_ERG_BACKEND") or ("cython" if _compiled is not None else "python")
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled core is not built; reinstall the package or use the python backend")
        return _compiled
    if name == "python":
        return _core_py
    raise ValueError(f"unknown backend {name!r}")


BACKEND = "cython" if _compiled is not None and os.environ.get("ATTITUDE_ERG_BACKEND") != "python" else "python"


def pack_model(J, gains, cset, dsm_params, r) -> tuple[np.ndarray, np.ndarray]:
    J = np.asarray(J, dtype=float)
    P = np.empty(PARAM_LEN)
    P[0:9] = J.ravel()
    P[9:18] = np.linalg.inv(J).ravel()
    P[18], P[19] = gains.kP, gains.kD
    P[20:23] = cset.tau_max
    P[23:26] = cset.h
    P[26], P[27], P[28] = cset.zeta, cset.delta, cset.eta
    P[29], P[30], P[31] = dsm_params.kappa_e, dsm_params.kappa_a, dsm_params.kappa_tau
    P[32] = dsm_params.gamma_a
    P[33:37] = r
    C = np.zeros((len(cset.cones), 4))
    for k, c in enumerate(cset.cones):
        C[k, :3] = c.e
        C[k, 3] = c.psi
    return P, C
