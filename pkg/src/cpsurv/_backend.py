"""Kernel backend selection.

The hot numerical kernels exist in two flavors: scalar loops compiled with
numba (default when numba is importable) and a vectorized numpy/scipy path.
Set ``CPSURV_BACKEND=numpy`` to force the numpy path, ``CPSURV_BACKEND=numba``
to require numba (raises if unavailable). Anything else selects automatically.
"""

import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    NUMBA_AVAILABLE = False


def _resolve() -> str:
    requested = os.environ.get("CPSURV_BACKEND", "auto").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not NUMBA_AVAILABLE:
            raise ImportError("CPSURV_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if NUMBA_AVAILABLE else "numpy"


BACKEND = _resolve()


def jit_scalar(func):
    """Compile a scalar kernel with numba on the numba backend, else return as-is."""
    if BACKEND == "numba":
        return numba.njit(cache=True)(func)
    return func


def jit_kernel(func):
    """Compile an array kernel; nogil so chains can run in threads."""
    if BACKEND == "numba":
        return numba.njit(cache=True, nogil=True)(func)
    return func
