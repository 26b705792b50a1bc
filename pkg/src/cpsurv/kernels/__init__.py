"""Hot-path likelihood kernels with selectable backend.

``loglik_cp`` evaluates the per-observation change-point log-likelihood.
The numba backend compiles a scalar loop; the numpy backend is vectorized
over subjects. Selection follows ``cpsurv._backend.BACKEND``; both modules
stay importable for benchmarking and cross-checking.
"""

from .._backend import BACKEND

if BACKEND == "numba":
    from .numba_impl import loglik_cp
else:
    from .numpy_impl import loglik_cp

__all__ = ["loglik_cp", "BACKEND"]
