"""Backend selection for the hot kernels.

The compiled extension (Cython) covers the one-dimensional tail solve — it
fuses the per-row iteration and beats the NumPy backend at every batch size
(BLAS never amortizes the temporaries of the batched small-matrix products).
Everything else runs on the NumPy backend.  Set WKBPROP_FORCE_PY=1 to force
pure Python.
"""

from __future__ import annotations

import os

from . import _kernels_py

action_terms = _kernels_py.action_terms
low_residual = _kernels_py.low_residual

_cy = None
if not os.environ.get("WKBPROP_FORCE_PY"):
    try:
        from . import _kernels_cy as _cy  # type: ignore[no-redef]
    except ImportError:
        _cy = None

HAVE_COMPILED = _cy is not None
BACKEND = "cython" if HAVE_COMPILED else "python"


def tail_fixed_point(PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec, mass,
                     tol, max_iter, n_exact=0, F0=None):
    if _cy is not None and theta.shape[1] == 2:
        return _cy.tail_fixed_point(
            PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec, mass,
            tol, max_iter, n_exact, F0,
        )
    return _kernels_py.tail_fixed_point(
        PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec, mass,
        tol, max_iter, n_exact, F0,
    )


def tail_fixed_point_py(PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec,
                        mass, tol, max_iter, n_exact=0, F0=None):
    """Always the NumPy kernel (benchmark / agreement tests)."""
    return _kernels_py.tail_fixed_point(
        PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec, mass,
        tol, max_iter, n_exact, F0,
    )


def tail_fixed_point_cy(PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec,
                        mass, tol, max_iter, n_exact=0, F0=None):
    """Always the compiled kernel; raises if the extension is missing."""
    if _cy is None:
        raise RuntimeError("compiled backend not available")
    return _cy.tail_fixed_point(
        PHI, A0, V, w, AT, WT, theta, x, lsym, pamp, wvec, mass,
        tol, max_iter, n_exact, F0,
    )
