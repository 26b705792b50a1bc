"""Vectorized numpy/scipy likelihood kernel; the pure-numpy fallback path."""

import numpy as np
import scipy.special as sps

from ..special import _cte_increment


def cte_increment_vec(a, m, hr0, omega, tau_w, t):
    """Vectorized waning-hazard cumulative increment on (tau_w, t].

    Elements where the closed form is numerically unsafe (overflowing
    exp(omega * tau_w), heavy cancellation for t near tau_w, or out-of-bound
    results) are recomputed with the guarded scalar routine.
    """
    arrays = np.broadcast_arrays(
        np.asarray(a, dtype=float),
        np.asarray(m, dtype=float),
        np.asarray(hr0, dtype=float),
        np.asarray(omega, dtype=float),
        np.asarray(tau_w, dtype=float),
        np.asarray(t, dtype=float),
    )
    a, m, hr0, omega, tau_w, t = arrays
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        base = m * (t**a - tau_w**a)
        x0 = omega * tau_w
        x1 = omega * t
        scaled_diff = np.exp(sps.gammaln(a) + x0) * (sps.gammaincc(a, x0) - sps.gammaincc(a, x1))
        corr = a * m * (1.0 - hr0) * omega ** (-a) * scaled_diff
        val = np.where(hr0 == 1.0, base, base - corr)
        lo = np.minimum(hr0, 1.0) * base
        hi = np.maximum(hr0, 1.0) * base
        slack = 1e-9 * hi + 1e-300
        narrow = (x1 - x0) < 1e-3 * np.maximum(1.0, x0)
        bad = (
            ~np.isfinite(val)
            | (val < lo - slack)
            | (val > hi + slack)
            | (narrow & (hr0 != 1.0) & (base > 0.0))
        )
        val = np.clip(val, lo, hi)
    if np.any(bad):
        flat_bad = np.flatnonzero(bad.ravel())
        va, vm, vh = a.ravel(), m.ravel(), hr0.ravel()
        vo, vw, vt = omega.ravel(), tau_w.ravel(), t.ravel()
        out = val.ravel().copy()
        for idx in flat_bad:
            out[idx] = _cte_increment(va[idx], vm[idx], vh[idx], vo[idx], vw[idx], vt[idx])[0]
        val = out.reshape(val.shape)
    return val


def loglik_cp(time, logt, status, zu, row_idx, taus, bscale, bshape, cte_on,
              trt_col, omega, arm_col):
    """Per-observation change-point log-likelihood, vectorized over subjects.

    Same contract as the numba kernel: overflow produces -inf/NaN entries.
    """
    n = time.shape[0]
    k = taus.shape[0]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        ea = (zu @ bshape)[row_idx]  # (n, k+1)
        em = (zu @ bscale)[row_idx]
        a = np.exp(ea)
        m = np.exp(em)
        j = np.searchsorted(taus, time, side="left")
        if arm_col >= 0:
            restricted = zu[row_idx, arm_col] == 0.0
            j = np.where(restricted, 0, j)
        else:
            restricted = np.zeros(n, dtype=bool)
        rows = np.arange(n)
        log_h = ea[rows, j] + em[rows, j] + (a[rows, j] - 1.0) * logt

        H = np.zeros(n)
        if restricted.any():
            H[restricted] = m[restricted, 0] * np.exp(a[restricted, 0] * logt[restricted])
        unrestricted = ~restricted
        bounds = np.append(taus, np.inf)
        for g in range(k + 1):
            act = unrestricted & (j >= g)
            if not act.any():
                continue
            lo = 0.0 if g == 0 else float(taus[g - 1])
            hi = np.minimum(time[act], bounds[g])
            if cte_on and g == k:
                hr0 = np.exp(zu[row_idx[act], trt_col] * bscale[trt_col, k - 1])
                H[act] += cte_increment_vec(a[act, k], m[act, k], hr0, omega, taus[k - 1], hi)
                own = j[act] == k
                hr_t = 1.0 - (1.0 - hr0) * np.exp(-omega * (time[act] - taus[k - 1]))
                adj = np.zeros(hr_t.shape)
                adj[own] = np.log(hr_t[own])
                log_h[act] += adj
            else:
                H[act] += m[act, g] * (hi ** a[act, g] - lo ** a[act, g])

        ll = -H
        events = status == 1.0
        ll[events] += log_h[events]
    return ll
