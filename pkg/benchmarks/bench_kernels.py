"""Benchmark the change-point likelihood kernel: numba backend vs numpy fallback.

The kernel is the sampler's hot path (one evaluation per block proposal, so
hundreds of thousands per fit). Run:

    python benchmarks/bench_kernels.py

Both implementations are imported directly, regardless of CPSURV_BACKEND, so
the comparison works in a single process. When numba is absent, the "numba"
column runs the same code as interpreted Python, which is the honest cost of
losing the JIT.
"""

import time

import numpy as np

from cpsurv._backend import BACKEND, NUMBA_AVAILABLE
from cpsurv.kernels import numba_impl, numpy_impl
from cpsurv.likelihood import ParamLayout, kernel_inputs
from cpsurv.scenarios import ScenarioPreset, expand_preset
from cpsurv.simstudy import SimScenario, simulate_dataset


def build_case(kind, n_per_arm, preset, omega=0.0):
    sc = SimScenario(kind=kind, shape=1.3, hr=0.25, tau=1.0,
                     n_per_arm=n_per_arm, t_cens=5.0)
    ds = simulate_dataset(sc, rep_seed=12345)
    spec = expand_preset(preset, ("Intercept", "trt"), k=1)
    layout = ParamLayout(spec)
    theta = np.zeros(len(layout))
    theta[0] = 1.0  # tau
    for i, entry in enumerate(layout.entries):
        if entry.kind == "coef":
            theta[i] = -0.5 if entry.is_intercept else -1.0
        elif entry.kind == "omega":
            theta[i] = 1.0
    state = layout.unpack(theta)
    time_, logt, status, zu, row_idx, trt_col, arm_col = kernel_inputs(spec, ds)
    args = (
        time_, logt, status, zu, row_idx,
        state.taus, state.beta_scale, state.beta_shape,
        spec.cte, trt_col, float(state.omega or 0.0), arm_col,
    )
    return args


def time_kernel(fn, args, repeats):
    fn(*args)  # warm up / compile
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats * 1e6


def main():
    print(f"selected backend: {BACKEND} (numba available: {NUMBA_AVAILABLE})")
    print(f"{'case':<28}{'n':>8}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    cases = [
        ("step change-point", "TD", ScenarioPreset.TREATMENT_DELAY),
        ("converging hazards", "CTE", ScenarioPreset.CONVERGING_HAZARDS),
    ]
    for label, kind, preset in cases:
        for n_per_arm in (100, 500, 5000):
            args = build_case(kind, n_per_arm, preset)
            repeats = max(20, 4000 // max(1, n_per_arm // 100))
            t_nb = time_kernel(numba_impl.loglik_cp, args, repeats)
            t_np = time_kernel(numpy_impl.loglik_cp, args, repeats)
            a = numba_impl.loglik_cp(*args)
            b = numpy_impl.loglik_cp(*args)
            assert np.max(np.abs(a - b)) < 1e-8, "backends disagree"
            print(
                f"{label:<28}{2 * n_per_arm:>8}{t_nb:>12.1f}{t_np:>12.1f}"
                f"{t_np / t_nb:>10.2f}x"
            )


if __name__ == "__main__":
    main()
