"""Backend selection for the hot assembly kernels.

The compiled extension is preferred; the numpy implementation is the
fallback and the reference.  Set ENTROPY_DG_PURE_PYTHON=1 to force the
fallback (used by the benchmark and the cross-checking tests).
"""

import os

from . import _kernels_py

try:
    from . import _speedups
except ImportError:  # extension not built; fall back silently
    _speedups = None

_force_py = os.environ.get("ENTROPY_DG_PURE_PYTHON", "") in ("1", "true", "yes")
BACKEND = "python" if (_speedups is None or _force_py) else "compiled"


def _unpack(tab):
    return (tab.h, tab.w, tab.phi, tab.dphi, tab.phi0, tab.phi1,
            tab.dphi0, tab.dphi1, tab.samp, tab.pen_w, tab.c_inv2)


def residual(ck, exp_prev_q, tab, dt, diff, eps, reaction, backend=None):
    if (backend or BACKEND) == "compiled":
        return _speedups.residual(ck, exp_prev_q, *_unpack(tab),
                                  dt, diff, eps, reaction)
    return _kernels_py.residual(ck, exp_prev_q, tab, dt, diff, eps, reaction)


def jacobian(ck, exp_prev_q, tab, dt, diff, eps, reaction, backend=None):
    if (backend or BACKEND) == "compiled":
        return _speedups.jacobian(ck, exp_prev_q, *_unpack(tab),
                                  dt, diff, eps, reaction)
    return _kernels_py.jacobian(ck, exp_prev_q, tab, dt, diff, eps, reaction)


def fd_jacobian_oracle(ck, exp_prev_q, tab, dt, diff, eps, reaction):
    """Directional finite differences of the branch-frozen residual;
    cross-check oracle for the exact Jacobian (numpy path only)."""
    return _kernels_py.fd_jacobian(ck, exp_prev_q, tab, dt, diff, eps, reaction)


def available_backends():
    return ("python",) if _speedups is None else ("python", "compiled")
