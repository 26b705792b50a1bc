"""Segment hazards, covariate links and the converging-hazard-ratio machinery.

Weibull segments use the parameterization h(t) = a * m * t^(a-1) and
H(t) = m * t^a operating on absolute time; an exponential segment is the
a = 1 special case.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EvaluationError
from .special import _cte_increment

# Constraint tags for coefficient-matrix entries.
FREE = "free"
ZERO = "zero"
CTE_LINK = "cte_link"
SHARED_PREFIX = "shared:"


def shared(group: str) -> str:
    return SHARED_PREFIX + group


def is_shared(tag: str) -> bool:
    return tag.startswith(SHARED_PREFIX)


@dataclass(frozen=True)
class SegmentParams:
    """Weibull shape/scale pair for one subject in one interval."""

    shape: float
    scale: float

    def __post_init__(self):
        for name, v in (("shape", self.shape), ("scale", self.scale)):
            if not (v > 0.0) or not math.isfinite(v):
                raise DomainError(f"SegmentParams.{name} must be positive and finite, got {v!r}")


@dataclass(frozen=True)
class CteParams:
    """Waning treatment effect: HR converges from hr_initial toward 1.

    ``tau_wane`` is the time the hazard ratio starts converging; ``omega`` is
    the convergence rate per unit time.
    """

    hr_initial: float
    omega: float
    tau_wane: float

    def __post_init__(self):
        if not (self.hr_initial > 0.0):
            raise DomainError(f"hr_initial must be positive, got {self.hr_initial!r}")
        if not (self.omega > 0.0):
            raise DomainError(f"omega must be positive, got {self.omega!r}")
        if not (self.tau_wane >= 0.0):
            raise DomainError(f"tau_wane must be nonnegative, got {self.tau_wane!r}")


class CoefficientMatrix:
    """Realized p x (k+1) coefficient matrix with per-entry constraint tags.

    Rows are covariates (intercept first), columns are intervals. ZERO and
    CTE_LINK entries must hold exactly 0; SHARED entries are equal within a
    group and groups never span both values- and shape-matrices.
    """

    def __init__(self, values, mask):
        values = np.asarray(values, dtype=float)
        mask = np.asarray(mask, dtype=object)
        if values.shape != mask.shape or values.ndim != 2:
            raise DomainError("values and mask must be 2-d arrays of equal shape")
        self.values = values
        self.mask = mask
        self.validate()

    @property
    def shape(self):
        return self.values.shape

    def validate(self):
        groups: dict[str, float] = {}
        n_link = 0
        for (r, c), tag in np.ndenumerate(self.mask):
            v = self.values[r, c]
            if tag == ZERO or tag == CTE_LINK:
                if v != 0.0:
                    raise DomainError(f"entry ({r},{c}) tagged {tag} must be 0, got {v!r}")
                n_link += tag == CTE_LINK
            elif is_shared(tag):
                if tag in groups and groups[tag] != v:
                    raise DomainError(f"shared group {tag!r} has unequal values")
                groups[tag] = v
            elif tag != FREE:
                raise DomainError(f"unknown constraint tag {tag!r}")
        if n_link > 1:
            raise DomainError("at most one cte_link entry is permitted")


def link_segment_params(design_row, beta_scale, beta_shape, interval: int) -> SegmentParams:
    """Per-subject interval parameters: m = exp(z . beta_m[, j]), a = exp(z . beta_a[, j])."""
    bm = beta_scale.values if isinstance(beta_scale, CoefficientMatrix) else np.asarray(beta_scale)
    ba = beta_shape.values if isinstance(beta_shape, CoefficientMatrix) else np.asarray(beta_shape)
    z = np.asarray(design_row, dtype=float)
    if not 1 <= interval <= bm.shape[1]:
        raise DomainError(f"interval {interval} outside 1..{bm.shape[1]}")
    m = math.exp(float(z @ bm[:, interval - 1]))
    a = math.exp(float(z @ ba[:, interval - 1]))
    if not (math.isfinite(m) and math.isfinite(a)):
        raise EvaluationError(
            f"linear predictor overflowed for interval {interval} (m={m!r}, a={a!r})"
        )
    return SegmentParams(shape=a, scale=m)


def weibull_hazard(t: float, p: SegmentParams) -> float:
    """h(t) = a * m * t^(a-1); constant m when a = 1."""
    if not (t > 0.0):
        raise DomainError(f"hazard requires t > 0, got {t!r}")
    return p.shape * p.scale * t ** (p.shape - 1.0)


def weibull_cum_hazard(t: float, p: SegmentParams) -> float:
    """H(t) = m * t^a, nondecreasing with H(0) = 0."""
    if not (t >= 0.0):
        raise DomainError(f"cumulative hazard requires t >= 0, got {t!r}")
    return p.scale * t**p.shape


def segment_cum_hazard_increment(t0: float, t1: float, p: SegmentParams) -> float:
    """H(t1) - H(t0) = m * (t1^a - t0^a) on absolute time."""
    if not (0.0 <= t0 <= t1):
        raise DomainError(f"need 0 <= t0 <= t1, got ({t0!r}, {t1!r})")
    return p.scale * (t1**p.shape - t0**p.shape)


def cte_hazard_ratio(t: float, c: CteParams) -> float:
    """HR(t) = 1 - (1 - hr_initial) * exp(-omega * (t - tau_wane)) for t >= tau_wane."""
    if t < c.tau_wane:
        raise DomainError(f"t = {t!r} precedes tau_wane = {c.tau_wane!r}")
    return 1.0 - (1.0 - c.hr_initial) * math.exp(-c.omega * (t - c.tau_wane))


@dataclass(frozen=True)
class CteIncrementInfo:
    used_quadrature_fallback: bool


def cte_cum_hazard_increment(t: float, base: SegmentParams, c: CteParams, detail: bool = False):
    """Treatment-arm cumulative hazard accrued on (tau_wane, t].

    Uses the closed form built on the upper incomplete gamma function (the
    a = 1 exponential case reduces to elementary functions); falls back to
    quadrature when the closed form turns non-finite, which ``detail=True``
    reports via CteIncrementInfo.
    """
    if t < c.tau_wane:
        raise DomainError(f"t = {t!r} precedes tau_wane = {c.tau_wane!r}")
    value, used_quad = _cte_increment(
        base.shape, base.scale, c.hr_initial, c.omega, c.tau_wane, t
    )
    if detail:
        return value, CteIncrementInfo(bool(used_quad))
    return value
