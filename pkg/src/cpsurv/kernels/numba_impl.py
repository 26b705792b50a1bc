"""Scalar-loop likelihood kernel, compiled with numba on the numba backend."""

import math

import numpy as np

from .._backend import jit_kernel
from ..special import _cte_increment


@jit_kernel
def loglik_cp(time, logt, status, zu, row_idx, taus, bscale, bshape, cte_on,
              trt_col, omega, arm_col):
    """Per-observation log-likelihood of the change-point model.

    Subjects are grouped by unique design row (``zu``/``row_idx``) so the
    per-interval segment parameters are computed once per group: the hazard in
    interval g is a_g * m_g * t^(a_g - 1) with m_g = exp(z . bscale[:, g]) and
    a_g = exp(z . bshape[:, g]), and the cumulative hazard accrues on absolute
    time. With ``cte_on`` the final interval applies a waning hazard ratio to
    the treatment arm. ``arm_col`` >= 0 pins subjects with a zero entry in
    that column to interval 1 throughout (one-arm change-point). Overflowing
    states produce -inf or NaN entries, never exceptions.
    """
    n = time.shape[0]
    u = zu.shape[0]
    k = taus.shape[0]

    ea = zu @ bshape  # (u, k+1)
    em = zu @ bscale
    a = np.exp(ea)
    m = np.exp(em)

    # tau_{g-1}^{a_g} and tau_g^{a_g} per group, then prefix sums of the
    # full-interval cumulative-hazard increments
    lo_pow = np.zeros((u, k + 1))
    prefix = np.zeros((u, k + 1))
    for r in range(u):
        acc = 0.0
        for g in range(k + 1):
            lo_pow[r, g] = 0.0 if g == 0 else taus[g - 1] ** a[r, g]
            prefix[r, g] = acc
            if g < k:
                acc += m[r, g] * (taus[g] ** a[r, g] - lo_pow[r, g])

    hr0 = np.ones(u)
    if cte_on:
        for r in range(u):
            hr0[r] = math.exp(zu[r, trt_col] * bscale[trt_col, k - 1])

    restricted = np.zeros(u, dtype=np.bool_)
    if arm_col >= 0:
        for r in range(u):
            restricted[r] = zu[r, arm_col] == 0.0

    out = np.empty(n)
    for i in range(n):
        t = time[i]
        r = row_idx[i]
        if restricted[r]:
            ll = -m[r, 0] * math.exp(a[r, 0] * logt[i])
            if status[i] == 1.0:
                ll += ea[r, 0] + em[r, 0] + (a[r, 0] - 1.0) * logt[i]
            out[i] = ll
            continue
        j = 0
        while j < k and taus[j] < t:
            j += 1
        if cte_on and j == k:
            inc, _ = _cte_increment(a[r, k], m[r, k], hr0[r], omega, taus[k - 1], t)
            ll = -prefix[r, k] - inc
            if status[i] == 1.0:
                hr_t = 1.0 - (1.0 - hr0[r]) * math.exp(-omega * (t - taus[k - 1]))
                ll += ea[r, k] + em[r, k] + (a[r, k] - 1.0) * logt[i] + math.log(hr_t)
        else:
            ll = -prefix[r, j] - m[r, j] * (math.exp(a[r, j] * logt[i]) - lo_pow[r, j])
            if status[i] == 1.0:
                ll += ea[r, j] + em[r, j] + (a[r, j] - 1.0) * logt[i]
        out[i] = ll
    return out
