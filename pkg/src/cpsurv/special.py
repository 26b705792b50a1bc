"""Self-contained numerical kernels: log-gamma, upper incomplete gamma, quadrature.

The scalar routines here are compiled with numba on the numba backend and are
callable from inside the compiled likelihood kernels. They return NaN instead
of raising when an iteration fails to converge; the public wrappers turn that
into :class:`~cpsurv.errors.ConvergenceError`.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._backend import jit_scalar
from .errors import ConvergenceError, DomainError, EvaluationError

_MAX_ITER = 500
_TERM_TOL = 1e-14

# 15-point Gauss-Kronrod rule on [-1, 1]; the embedded 7-point Gauss rule
# shares the even-indexed nodes.
_GK_NODES = np.array(
    [
        -0.991455371120813,
        -0.949107912342759,
        -0.864864423359769,
        -0.741531185599394,
        -0.586087235467691,
        -0.405845151377397,
        -0.207784955007898,
        0.0,
        0.207784955007898,
        0.405845151377397,
        0.586087235467691,
        0.741531185599394,
        0.864864423359769,
        0.949107912342759,
        0.991455371120813,
    ]
)
_GK_WEIGHTS = np.array(
    [
        0.022935322010529,
        0.063092092629979,
        0.104790010322250,
        0.140653259715525,
        0.169004726639267,
        0.190350578064785,
        0.204432940075298,
        0.209482141084728,
        0.204432940075298,
        0.190350578064785,
        0.169004726639267,
        0.140653259715525,
        0.104790010322250,
        0.063092092629979,
        0.022935322010529,
    ]
)
_G_WEIGHTS = np.array(
    [
        0.129484966168870,
        0.279705391489277,
        0.381830050505119,
        0.417959183673469,
        0.381830050505119,
        0.279705391489277,
        0.129484966168870,
    ]
)


@jit_scalar
def _lower_series(a, x):
    """Regularized lower incomplete gamma P(a, x) by series, for x < a + 1."""
    if x == 0.0:
        return 0.0
    term = 1.0 / a
    total = term
    n = 0
    while n < _MAX_ITER:
        n += 1
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * _TERM_TOL:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    return math.nan


@jit_scalar
def _upper_cf_factor(a, x):
    """Continued-fraction factor h with Gamma(a, x) = exp(-x + a*log x) * h.

    Modified Lentz iteration; intended for x >= a + 1.
    """
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    i = 0
    while i < _MAX_ITER:
        i += 1
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _TERM_TOL:
            return h
    return math.nan


@jit_scalar
def _gamma_upper(a, x):
    """Non-regularized upper incomplete gamma Gamma(a, x), a > 0, x >= 0."""
    if x == 0.0:
        return math.exp(math.lgamma(a))
    if x < a + 1.0:
        p = _lower_series(a, x)
        return math.exp(math.lgamma(a)) * (1.0 - p)
    return math.exp(-x + a * math.log(x)) * _upper_cf_factor(a, x)


@jit_scalar
def _gk15_scaled_gamma(a, x0, x1):
    """integral over [x0, x1] of s^(a-1) * exp(-(s - x0)) ds by one K15 panel."""
    half = 0.5 * (x1 - x0)
    mid = 0.5 * (x0 + x1)
    total = 0.0
    for i in range(15):
        s = mid + half * _GK_NODES[i]
        total += _GK_WEIGHTS[i] * math.exp((a - 1.0) * math.log(s) - (s - x0))
    return total * half


@jit_scalar
def _exp_scaled_gamma_diff(a, x0, x1):
    """exp(x0) * (Gamma(a, x0) - Gamma(a, x1)) for 0 <= x0 <= x1, overflow-safe.

    Equals the integral over [x0, x1] of s^(a-1) * exp(-(s - x0)) ds.
    """
    if x1 <= x0:
        return 0.0
    if x0 == 0.0:
        if x1 < a + 1.0:
            return math.exp(math.lgamma(a)) * _lower_series(a, x1)
        tail = math.exp(-x1 + a * math.log(x1)) * _upper_cf_factor(a, x1)
        return math.exp(math.lgamma(a)) - tail
    if x1 - x0 < 1e-5 * max(1.0, x0):
        # differencing would cancel; integrate the narrow panel directly
        return _gk15_scaled_gamma(a, x0, x1)
    if x0 >= a + 1.0:
        t0 = math.exp(a * math.log(x0)) * _upper_cf_factor(a, x0)
        t1 = math.exp(x0 - x1 + a * math.log(x1)) * _upper_cf_factor(a, x1)
        return t0 - t1
    g0 = _gamma_upper(a, x0)
    if x1 < a + 1.0:
        return math.exp(x0) * (g0 - _gamma_upper(a, x1))
    t1 = math.exp(x0 - x1 + a * math.log(x1)) * _upper_cf_factor(a, x1)
    return math.exp(x0) * g0 - t1


@jit_scalar
def _cte_quad(a, m, hr0, omega, tau_w, t):
    """Composite-Simpson evaluation of the waning-hazard increment.

    Integrates hr(s) * a*m*s^(a-1) over (tau_w, t] where
    hr(s) = 1 - (1 - hr0)*exp(-omega*(s - tau_w)). For a < 1 the substitution
    u = s^a removes the endpoint singularity at s = 0.
    """
    if t <= tau_w:
        return 0.0
    in_u_space = a < 1.0
    if in_u_space:
        lo = tau_w**a
        hi = t**a
    else:
        lo = tau_w
        hi = t
    n = 8
    prev = math.inf
    result = math.inf
    while n <= 1 << 18:
        h = (hi - lo) / n
        acc = 0.0
        for i in range(n + 1):
            u = lo + h * i
            if in_u_space:
                s = u ** (1.0 / a)
                f = m * (1.0 - (1.0 - hr0) * math.exp(-omega * (s - tau_w)))
            else:
                s = u
                f = (1.0 - (1.0 - hr0) * math.exp(-omega * (s - tau_w))) * a * m * s ** (a - 1.0)
            if i == 0 or i == n:
                acc += f
            elif i % 2 == 1:
                acc += 4.0 * f
            else:
                acc += 2.0 * f
        result = acc * h / 3.0
        if abs(result - prev) <= 1e-11 * max(abs(result), 1e-300):
            return result
        prev = result
        n *= 2
    return result


@jit_scalar
def _cte_increment(a, m, hr0, omega, tau_w, t):
    """Treatment-arm cumulative-hazard increment on (tau_w, t] under a waning HR.

    Closed form uses the upper incomplete gamma function; falls back to
    quadrature when the closed form loses validity. Returns (value, used_quad).
    """
    if t <= tau_w:
        return 0.0, False
    base = m * (t**a - tau_w**a)
    if hr0 == 1.0 or base == 0.0:
        return base, False
    if a == 1.0:
        dt = t - tau_w
        val = m * (dt + (1.0 - hr0) * math.expm1(-omega * dt) / omega)
        return val, False
    d = _exp_scaled_gamma_diff(a, omega * tau_w, omega * t)
    corr = a * m * (1.0 - hr0) * math.exp(-a * math.log(omega)) * d
    val = base - corr
    lo = min(hr0, 1.0) * base
    hi = max(hr0, 1.0) * base
    slack = 1e-9 * hi + 1e-300
    if not math.isfinite(val) or val < lo - slack or val > hi + slack:
        return _cte_quad(a, m, hr0, omega, tau_w, t), True
    if val < lo:
        val = lo
    elif val > hi:
        val = hi
    return val, False


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    if not (x > 0.0) or not math.isfinite(x):
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def upper_incomplete_gamma(a: float, x: float) -> float:
    """Non-regularized upper incomplete gamma Gamma(a, x).

    Series representation for x < a + 1, continued fraction otherwise.
    """
    if not (a > 0.0) or not math.isfinite(a):
        raise DomainError(f"upper_incomplete_gamma requires a > 0, got {a!r}")
    if not (x >= 0.0) or not math.isfinite(x):
        raise DomainError(f"upper_incomplete_gamma requires x >= 0, got {x!r}")
    value = _gamma_upper(a, x)
    if math.isnan(value):
        raise ConvergenceError(
            f"incomplete gamma did not converge within {_MAX_ITER} terms (a={a}, x={x})"
        )
    return value


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int


def _gk15_panel(f, lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (lo + hi)
    fx = np.empty(15)
    for i in range(15):
        x = mid + half * _GK_NODES[i]
        v = f(x)
        if not math.isfinite(v):
            raise EvaluationError(f"integrand returned non-finite value at x={x!r}")
        fx[i] = v
    k15 = half * float(np.dot(_GK_WEIGHTS, fx))
    g7 = half * float(np.dot(_G_WEIGHTS, fx[1::2]))
    return k15, abs(k15 - g7)


def integrate_adaptive(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10
) -> QuadratureResult:
    """Adaptive bisection with a 15-point Gauss-Kronrod rule.

    The error target is max(tol, tol * |integral|), apportioned to panels by
    length. Raises EvaluationError on non-finite integrand values and
    ConvergenceError if bisection cannot reach the tolerance.
    """
    if not (lo < hi):
        raise DomainError(f"integrate_adaptive requires lo < hi, got [{lo!r}, {hi!r}]")
    if not (tol > 0.0):
        raise DomainError("tol must be positive")
    total_len = hi - lo
    value0, err0 = _gk15_panel(f, lo, hi)
    evaluations = 15
    budget = max(tol, tol * abs(value0))
    if err0 <= budget:
        return QuadratureResult(value0, err0, evaluations)

    max_depth = 50
    stack = [(lo, hi, value0, err0, 0)]
    accepted = 0.0
    accepted_err = 0.0
    width_floor = 4.0 * np.finfo(float).eps * total_len
    while stack:
        a, b, v, e, depth = stack.pop()
        if e <= budget * (b - a) / total_len or (b - a) <= width_floor:
            accepted += v
            accepted_err += e
            continue
        if depth >= max_depth:
            raise ConvergenceError(
                f"quadrature failed to converge on [{a!r}, {b!r}] at depth {depth}"
            )
        mid = 0.5 * (a + b)
        v1, e1 = _gk15_panel(f, a, mid)
        v2, e2 = _gk15_panel(f, mid, b)
        evaluations += 30
        stack.append((a, mid, v1, e1, depth + 1))
        stack.append((mid, b, v2, e2, depth + 1))
    return QuadratureResult(accepted, accepted_err, evaluations)
