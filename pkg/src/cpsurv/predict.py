"""Posterior survival/hazard-ratio curves and restricted mean survival time."""

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .kernels.numpy_impl import cte_increment_vec
from .likelihood import ParamLayout
from .mcmc import PosteriorDraws
from .scenarios import ModelSpec

DEFAULT_GRID_POINTS = 200


@dataclass(frozen=True)
class CurveRequest:
    """Covariate profile, treatment contrast and evaluation grid.

    Standardized covariates (those with recorded scaling or a ``_scale``
    suffix) default to 0, i.e. the mean of the original variable. Raw values
    can be supplied under the unscaled name when scaling metadata is present.
    """

    t_max: float
    profile: Mapping[str, float] = field(default_factory=dict)
    arms: tuple[float, float] = (0.0, 1.0)
    trt_name: str = "trt"
    times: Sequence[float] | None = None
    grid_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if not (self.t_max > 0.0):
            raise ValidationError("t_max must be positive")
        if self.times is not None:
            ts = np.asarray(self.times, dtype=float)
            if ts.size == 0 or np.any(ts < 0.0) or np.any(ts > self.t_max):
                raise ValidationError("times must lie within [0, t_max]")

    def grid(self) -> np.ndarray:
        if self.times is not None:
            return np.asarray(self.times, dtype=float)
        return np.linspace(0.0, self.t_max, self.grid_points)


@dataclass(frozen=True)
class Band:
    median: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray


@dataclass(frozen=True)
class CurveSummary:
    """Pointwise posterior summaries over the time grid."""

    kind: str
    times: np.ndarray
    bands: Mapping[object, Band]
    cp_density: Mapping[str, np.ndarray] = field(default_factory=dict)
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class PosteriorScalar:
    median: float
    lo95: float
    hi95: float
    draws: np.ndarray

    @classmethod
    def from_draws(cls, values: np.ndarray) -> "PosteriorScalar":
        lo, med, hi = np.percentile(values, [2.5, 50.0, 97.5])
        return cls(float(med), float(lo), float(hi), values)


def profile_row(
    spec: ModelSpec,
    req: CurveRequest,
    arm: float,
    scaling: Mapping[str, tuple[float, float]] | None = None,
) -> np.ndarray:
    """Design row for a covariate profile, with raw-scale conversion support."""
    scaling = scaling or {}
    z = np.ones(spec.p)
    for idx, name in enumerate(spec.covariates):
        if name == "Intercept":
            continue
        if name == req.trt_name:
            z[idx] = arm
        elif name in req.profile:
            z[idx] = float(req.profile[name])
        elif name in scaling and name.endswith("_scale") and name[: -len("_scale")] in req.profile:
            mean, sd = scaling[name]
            z[idx] = (float(req.profile[name[: -len("_scale")]]) - mean) / sd
        elif name in scaling or name.endswith("_scale"):
            z[idx] = 0.0
        else:
            raise ValidationError(f"profile is missing covariate {name!r}")
    return z


@dataclass(frozen=True)
class ProfileParams:
    """Per-draw interval parameters for a fixed covariate profile."""

    m: np.ndarray  # (n_draws, k+1)
    a: np.ndarray  # (n_draws, k+1)
    taus: np.ndarray  # (n_draws, k)
    hr0: np.ndarray | None  # waning models: HR just before onset
    omega: np.ndarray | None
    cte_applies: bool


def profile_params(draws: PosteriorDraws, spec: ModelSpec, z: np.ndarray) -> ProfileParams:
    layout = ParamLayout(spec)
    nd = draws.params.shape[0]
    k = spec.k
    beta = {
        "scale": np.zeros((nd, spec.p, k + 1)),
        "shape": np.zeros((nd, spec.p, k + 1)),
    }
    omega = None
    for i, entry in enumerate(layout.entries):
        if entry.kind == "tau":
            continue
        if entry.kind == "omega":
            omega = draws.params[:, i]
            continue
        for r, c in entry.positions:
            beta[entry.side][:, r, c] = draws.params[:, i]
    eta_m = np.einsum("p,npk->nk", z, beta["scale"])
    eta_a = np.einsum("p,npk->nk", z, beta["shape"])
    taus = draws.params[:, :k] if k else np.zeros((nd, 0))
    hr0 = None
    cte_applies = False
    if spec.cte:
        trt = spec.trt_index
        hr0 = np.exp(z[trt] * beta["scale"][:, trt, k - 1])
        cte_applies = z[trt] != 0.0
    return ProfileParams(np.exp(eta_m), np.exp(eta_a), taus, hr0, omega, cte_applies)


def cumulative_hazard_matrix(ts: np.ndarray, pp: ProfileParams, cte: bool) -> np.ndarray:
    """(n_draws, n_times) cumulative hazard for one covariate profile."""
    ts = np.asarray(ts, dtype=float)
    nd, cols = pp.m.shape
    k = cols - 1
    t = ts[None, :]
    H = np.zeros((nd, ts.size))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for g in range(k + 1):
            lo = pp.taus[:, g - 1][:, None] if g > 0 else np.zeros((nd, 1))
            active = t > lo
            if g < k:
                hi = np.minimum(t, pp.taus[:, g][:, None])
            else:
                hi = np.broadcast_to(t, (nd, ts.size))
            if cte and g == k:
                tau_w = pp.taus[:, k - 1][:, None]
                t_eff = np.maximum(hi, tau_w)
                hr0 = pp.hr0[:, None] if pp.cte_applies else np.ones((nd, 1))
                inc = cte_increment_vec(
                    pp.a[:, k][:, None],
                    pp.m[:, k][:, None],
                    np.broadcast_to(hr0, t_eff.shape),
                    np.broadcast_to(pp.omega[:, None], t_eff.shape),
                    np.broadcast_to(tau_w, t_eff.shape),
                    t_eff,
                )
                H += np.where(active, inc, 0.0)
            else:
                seg = pp.m[:, g][:, None] * (
                    np.maximum(hi, 0.0) ** pp.a[:, g][:, None] - lo ** pp.a[:, g][:, None]
                )
                H += np.where(active, seg, 0.0)
    return H


def survival_matrix(
    draws: PosteriorDraws,
    spec: ModelSpec,
    req: CurveRequest,
    arm: float,
    ts: np.ndarray,
    scaling=None,
) -> np.ndarray:
    z = profile_row(spec, req, arm, scaling)
    pp = profile_params(draws, spec, z)
    return np.exp(-cumulative_hazard_matrix(ts, pp, spec.cte))


def _band(matrix: np.ndarray) -> Band:
    lo, med, hi = np.percentile(matrix, [2.5, 50.0, 97.5], axis=0)
    return Band(median=med, lo95=lo, hi95=hi)


def changepoint_density(
    draws: PosteriorDraws, spec: ModelSpec, ts: np.ndarray
) -> dict[str, np.ndarray]:
    """Gaussian-kernel density of each change-point over the grid."""
    out = {}
    for j in range(spec.k):
        tau = draws.params[:, j]
        bw = 0.0
        if tau.size > 1:
            sd = tau.std(ddof=1)
            iqr = np.subtract(*np.percentile(tau, [75, 25]))
            spread = min(sd, iqr / 1.34) if iqr > 0 else sd
            bw = 0.9 * spread * tau.size ** (-0.2)
        if not (bw > 0.0):
            bw = max(1e-3 * draws.tau_max, 1e-12)
        zscore = (ts[None, :] - tau[:, None]) / bw
        out[f"tau{j + 1}"] = np.exp(-0.5 * zscore**2).mean(axis=0) / (
            bw * math.sqrt(2.0 * math.pi)
        )
    return out


def survival_curve(
    draws: PosteriorDraws, spec: ModelSpec, req: CurveRequest, scaling=None
) -> CurveSummary:
    """Pointwise posterior summaries of S(t) per requested arm."""
    ts = req.grid()
    bands = {}
    for arm in req.arms:
        bands[arm] = _band(survival_matrix(draws, spec, req, arm, ts, scaling))
    return CurveSummary(
        kind="survival",
        times=ts,
        bands=bands,
        cp_density=changepoint_density(draws, spec, ts),
    )


def hr_curve(
    draws: PosteriorDraws, spec: ModelSpec, req: CurveRequest, scaling=None
) -> CurveSummary:
    """Posterior hazard ratio over time between the two requested arms.

    Piecewise constant for proportional-hazards specs; waning models follow
    the convergence formula beyond the final change-point. Specs with a
    treatment effect on the shape are computed pointwise and flagged.
    """
    ts = req.grid()
    arm0, arm1 = req.arms
    z0 = profile_row(spec, req, arm0, scaling)
    z1 = profile_row(spec, req, arm1, scaling)
    pp0 = profile_params(draws, spec, z0)
    pp1 = profile_params(draws, spec, z1)
    nd = draws.params.shape[0]
    k = spec.k
    t = ts[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        logt = np.where(t > 0.0, np.log(t), -np.inf)
        log_hr = np.zeros((nd, ts.size))
        for g in range(k + 1):
            lo = pp0.taus[:, g - 1][:, None] if g > 0 else np.zeros((nd, 1))
            if g < k:
                sel = (t > lo) & (t <= pp0.taus[:, g][:, None])
            else:
                sel = t > lo
            d_eta = (
                np.log(pp1.m[:, g]) + np.log(pp1.a[:, g])
                - np.log(pp0.m[:, g]) - np.log(pp0.a[:, g])
            )[:, None]
            d_shape = (pp1.a[:, g] - pp0.a[:, g])[:, None]
            contrib = d_eta + np.where(d_shape == 0.0, 0.0, d_shape * logt)
            if spec.cte and g == k:
                tau_w = pp0.taus[:, k - 1][:, None]
                hr0_ratio = np.ones((nd, 1))
                if pp1.cte_applies:
                    hr0_ratio = hr0_ratio * pp1.hr0[:, None]
                if pp0.cte_applies:
                    hr0_ratio = hr0_ratio / pp0.hr0[:, None]
                wane = 1.0 - (1.0 - hr0_ratio) * np.exp(
                    -pp0.omega[:, None] * np.maximum(t - tau_w, 0.0)
                )
                contrib = contrib + np.log(wane)
            log_hr = np.where(sel, contrib, log_hr)
    notes = ()
    trt = spec.trt_index
    if trt is not None and any(tag != "zero" for tag in spec.shape_mask[trt]):
        notes = ("treatment effect on the shape: hazard ratio varies within intervals",)
    return CurveSummary(
        kind="hazard_ratio",
        times=ts,
        bands={"hr": _band(np.exp(log_hr))},
        cp_density=changepoint_density(draws, spec, ts),
        notes=notes,
    )


def integrate_survival_draws(survfn, t_max: float, tol: float = 1e-8) -> np.ndarray:
    """Per-draw integral of S(t) over [0, t_max] by vectorized adaptive Simpson.

    ``survfn(ts)`` must return an (n_draws, len(ts)) matrix. Panels bisect
    until every draw's Richardson error estimate is below tol scaled by panel
    length, so the total error per draw stays below tol * t_max.
    """
    if not (t_max > 0.0):
        raise ValidationError("t_max must be positive")
    f0, fm, f1 = survfn(np.array([0.0, 0.5 * t_max, t_max])).T
    total = np.zeros_like(f0)
    stack = [(0.0, t_max, f0, fm, f1, 0)]
    max_depth = 30
    while stack:
        a, b, fa, fmid, fb, depth = stack.pop()
        h = b - a
        mid = 0.5 * (a + b)
        lm, rm = survfn(np.array([0.5 * (a + mid), 0.5 * (mid + b)])).T
        coarse = h / 6.0 * (fa + 4.0 * fmid + fb)
        left = h / 12.0 * (fa + 4.0 * lm + fmid)
        right = h / 12.0 * (fmid + 4.0 * rm + fb)
        fine = left + right
        err = np.abs(fine - coarse) / 15.0
        if depth >= max_depth or np.max(err) <= tol * h / t_max:
            total = total + fine + (fine - coarse) / 15.0
        else:
            stack.append((a, mid, fa, lm, fmid, depth + 1))
            stack.append((mid, b, fmid, rm, fb, depth + 1))
    return total


def rmst(
    draws: PosteriorDraws, spec: ModelSpec, req: CurveRequest, arm: float, scaling=None
) -> PosteriorScalar:
    """Posterior restricted mean survival time for one arm."""
    values = integrate_survival_draws(
        lambda ts: survival_matrix(draws, spec, req, arm, ts, scaling), req.t_max
    )
    return PosteriorScalar.from_draws(values)


def rmst_diff(
    draws: PosteriorDraws, spec: ModelSpec, req: CurveRequest, scaling=None
) -> PosteriorScalar:
    """Posterior between-arm difference in restricted mean survival time."""
    arm0, arm1 = req.arms
    r0 = rmst(draws, spec, req, arm0, scaling)
    r1 = rmst(draws, spec, req, arm1, scaling)
    return PosteriorScalar.from_draws(r1.draws - r0.draws)
