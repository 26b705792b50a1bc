"""Change-point log-likelihood, change-point and coefficient priors, posterior."""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset
from .errors import EvaluationError, ValidationError
from .hazards import CTE_LINK, FREE, ZERO, is_shared
from .scenarios import ModelSpec

LOG10 = math.log(10.0)
COEF_PRIOR_SD = 10.0
_NORMAL_CONST = -0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ParameterState:
    """One realized point in parameter space.

    ``beta_scale`` and ``beta_shape`` are the realized p x (k+1) coefficient
    matrices (constraints already applied); ``omega`` is present only for
    converging-hazards models.
    """

    taus: np.ndarray
    beta_scale: np.ndarray
    beta_shape: np.ndarray
    omega: float | None = None


@dataclass(frozen=True)
class LogLikBreakdown:
    total: float
    per_observation: np.ndarray


def validate_state(state: ParameterState, spec: ModelSpec, tau_max: float | None = None):
    """Check dimensions, change-point ordering and mask conformance."""
    taus = np.asarray(state.taus, dtype=float)
    if taus.shape != (spec.k,):
        raise ValidationError(f"expected {spec.k} change-points, got shape {taus.shape}")
    if taus.size:
        if not (taus[0] > 0.0) or np.any(np.diff(taus) <= 0.0):
            raise ValidationError(f"change-points must be increasing and positive: {taus}")
        if tau_max is not None and not (taus[-1] < tau_max):
            raise ValidationError(f"change-points must stay below tau_max={tau_max}")
    shape = (spec.p, spec.k + 1)
    for label, values, mask in (
        ("scale", state.beta_scale, spec.scale_mask),
        ("shape", state.beta_shape, spec.shape_mask),
    ):
        values = np.asarray(values, dtype=float)
        if values.shape != shape:
            raise ValidationError(f"beta_{label} must be {shape}, got {values.shape}")
        groups: dict[str, float] = {}
        for (r, c), tag in np.ndenumerate(mask):
            v = values[r, c]
            if tag in (ZERO, CTE_LINK) and v != 0.0:
                raise ValidationError(f"beta_{label}[{r},{c}] is constrained to 0, got {v!r}")
            if is_shared(tag):
                if tag in groups and groups[tag] != v:
                    raise ValidationError(f"beta_{label} group {tag!r} has unequal entries")
                groups[tag] = v
    if spec.cte:
        if state.omega is None or not (state.omega > 0.0):
            raise ValidationError("converging-hazards state requires omega > 0")
    elif state.omega is not None:
        raise ValidationError("omega given for a model without converging hazards")


@dataclass(frozen=True)
class ParamEntry:
    """One scalar sampler parameter and the mask positions it fills."""

    name: str
    kind: str  # "tau" | "coef" | "omega"
    side: str | None = None  # "scale" | "shape"
    positions: tuple[tuple[int, int], ...] = ()
    is_intercept: bool = False


class ParamLayout:
    """Mapping between the flat sampled vector and realized ParameterStates.

    Order: change-points, scale coefficients, shape coefficients, omega.
    Shared groups contribute a single entry that fills every tagged position.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        entries: list[ParamEntry] = []
        for j in range(spec.k):
            entries.append(ParamEntry(f"tau{j + 1}", "tau"))
        for side, mask in (("scale", spec.scale_mask), ("shape", spec.shape_mask)):
            seen_groups: dict[str, list[tuple[int, int]]] = {}
            order: list[str] = []
            for (r, c), tag in np.ndenumerate(mask):
                if tag == FREE:
                    name = f"{side}.{spec.covariates[r]}"
                    if spec.k > 0:
                        name += f".{c + 1}"
                    entries.append(
                        ParamEntry(name, "coef", side, ((r, c),), is_intercept=r == 0)
                    )
                elif is_shared(tag):
                    if tag not in seen_groups:
                        seen_groups[tag] = []
                        order.append(tag)
                    seen_groups[tag].append((r, c))
            for tag in order:
                positions = tuple(seen_groups[tag])
                rows = {r for r, _ in positions}
                name = f"{side}." + "+".join(
                    sorted({spec.covariates[r] for r in rows})
                )
                entries.append(
                    ParamEntry(name, "coef", side, positions, is_intercept=rows == {0})
                )
        if spec.cte:
            entries.append(ParamEntry("omega", "omega"))
        self.entries = tuple(entries)
        self.names = tuple(e.name for e in entries)

    def __len__(self):
        return len(self.entries)

    def unpack(self, theta: np.ndarray) -> ParameterState:
        theta = np.asarray(theta, dtype=float)
        spec = self.spec
        taus = theta[: spec.k].copy()
        beta_scale = np.zeros((spec.p, spec.k + 1))
        beta_shape = np.zeros((spec.p, spec.k + 1))
        omega = None
        for value, entry in zip(theta[spec.k :], self.entries[spec.k :]):
            if entry.kind == "omega":
                omega = float(value)
            else:
                target = beta_scale if entry.side == "scale" else beta_shape
                for r, c in entry.positions:
                    target[r, c] = value
        return ParameterState(taus, beta_scale, beta_shape, omega)

    def pack(self, state: ParameterState) -> np.ndarray:
        theta = np.empty(len(self.entries))
        theta[: self.spec.k] = np.asarray(state.taus, dtype=float)
        for i, entry in enumerate(self.entries[self.spec.k :], start=self.spec.k):
            if entry.kind == "omega":
                theta[i] = float(state.omega)
            else:
                source = state.beta_scale if entry.side == "scale" else state.beta_shape
                r, c = entry.positions[0]
                theta[i] = source[r, c]
        return theta


def interval_index(t: float, taus: Sequence[float], tau_max: float | None = None) -> int:
    """1-based interval of t under the right-closed convention t in (tau_{j-1}, tau_j]."""
    del tau_max  # relevant to the prior support, not to interval membership
    taus = np.asarray(taus, dtype=float)
    return int(np.searchsorted(taus, t, side="left")) + 1


def kernel_inputs(spec: ModelSpec, ds: Dataset):
    """Precompute the dataset-side kernel arguments (cacheable across calls)."""
    z = ds.design_matrix(spec.covariates)
    zu, row_idx = np.unique(z, axis=0, return_inverse=True)
    time = ds.times()
    trt_col = spec.trt_index if spec.trt_index is not None else -1
    arm_col = (
        spec.covariates.index(spec.arm_restriction) if spec.arm_restriction is not None else -1
    )
    return (
        time,
        np.log(time),
        ds.statuses(),
        np.ascontiguousarray(zu),
        row_idx.astype(np.int64).ravel(),
        trt_col,
        arm_col,
    )


def loglik_vector(state: ParameterState, spec: ModelSpec, ds: Dataset) -> np.ndarray:
    """Raw per-observation log-likelihood; NaN/-inf entries pass through."""
    time, logt, status, zu, row_idx, trt_col, arm_col = kernel_inputs(spec, ds)
    omega = float(state.omega) if spec.cte else 0.0
    return kernels.loglik_cp(
        time,
        logt,
        status,
        zu,
        row_idx,
        np.asarray(state.taus, dtype=float),
        np.asarray(state.beta_scale, dtype=float),
        np.asarray(state.beta_shape, dtype=float),
        spec.cte,
        trt_col,
        omega,
        arm_col,
    )


def log_likelihood(state: ParameterState, spec: ModelSpec, ds: Dataset) -> LogLikBreakdown:
    """Change-point log-likelihood with per-observation contributions.

    Raises EvaluationError naming the subject if an entry evaluates to NaN
    (for example a non-finite hazard at an event time).
    """
    per_obs = loglik_vector(state, spec, ds)
    if np.any(np.isnan(per_obs)):
        bad = int(np.flatnonzero(np.isnan(per_obs))[0])
        raise EvaluationError(
            f"log-likelihood is NaN for subject id={ds.records[bad].id} "
            f"(t={ds.records[bad].time})"
        )
    return LogLikBreakdown(float(np.sum(per_obs)), per_obs)


def log_prior_changepoints(taus: Sequence[float], tau_max: float, k: int) -> float:
    """Log density of the ordered change-point prior on (0, tau_max).

    Density (2k+1)! * prod_j (tau_j - tau_{j-1}) / tau_max^(2k+1) with
    tau_0 = 0 and tau_{k+1} = tau_max; out-of-range or unordered values
    yield -inf.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.shape != (k,):
        raise ValidationError(f"expected {k} change-points, got {taus.shape}")
    if k == 0:
        return 0.0
    aug = np.concatenate([[0.0], taus, [tau_max]])
    gaps = np.diff(aug)
    if np.any(gaps <= 0.0):
        return -math.inf
    return math.lgamma(2 * k + 2) + float(np.sum(np.log(gaps))) - (2 * k + 1) * math.log(tau_max)


def _coef_log_prior(value: float, is_intercept: bool) -> float:
    if is_intercept:
        # implied natural-scale parameter exp(beta) ~ Uniform(0, 10)
        if value >= LOG10:
            return -math.inf
        return value - LOG10
    w = value / COEF_PRIOR_SD
    return _NORMAL_CONST - math.log(COEF_PRIOR_SD) - 0.5 * w * w


def log_prior_coefficients(state: ParameterState, spec: ModelSpec) -> float:
    """Sum of coefficient priors: intercepts imply Uniform(0, 10) natural-scale
    parameters (log-link Jacobian applied); other coefficients and log(omega)
    get Normal(0, 10)."""
    layout = ParamLayout(spec)
    theta = layout.pack(state)
    total = 0.0
    for value, entry in zip(theta, layout.entries):
        if entry.kind == "tau":
            continue
        if entry.kind == "omega":
            if not (value > 0.0):
                return -math.inf
            total += _coef_log_prior(math.log(value), is_intercept=False)
        else:
            total += _coef_log_prior(float(value), entry.is_intercept)
        if total == -math.inf:
            return -math.inf
    return total


def log_posterior(
    state: ParameterState, spec: ModelSpec, ds: Dataset, tau_max: float | None = None
) -> float:
    """Unnormalized log posterior; -inf propagates, never raises."""
    if tau_max is None:
        tau_max = ds.max_time()
    lp = log_prior_changepoints(state.taus, tau_max, spec.k)
    if lp == -math.inf:
        return -math.inf
    lp += log_prior_coefficients(state, spec)
    if lp == -math.inf:
        return -math.inf
    per_obs = loglik_vector(state, spec, ds)
    total = float(np.sum(per_obs))
    if math.isnan(total):
        return -math.inf
    return lp + total
