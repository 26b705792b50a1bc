"""Standard parametric and spline survival models for WAIC/RMST league tables.

All comparators are fit with the same sampler as the change-point models and
weak Normal(0, 10) priors on every (transformed) parameter, so WAIC values are
directly comparable across the whole table. Positive parameters are sampled on
the log scale.

Parameterizations (eta = z . beta is the covariate linear predictor):
  exponential        rate lambda = exp(eta); H = lambda * t
  weibull            h = a * m * t^(a-1) with m = exp(eta), a = exp(g0)
  gamma              shape alpha = exp(g0), rate lambda = exp(eta)
  gompertz           h = lambda * exp(g0_real * t), lambda = exp(eta)
  log-logistic       shape b = exp(g0), scale alpha = exp(eta)
  log-normal         meanlog mu = eta, sdlog sigma = exp(g0)
  generalized-gamma  Prentice (mu, sigma, Q); Q = 0 handled as log-normal
  royston-parmar-*   log H(t) = natural cubic spline in log t; treatment on
                     the intercept (PH) or additionally on the linear term
                     (non-PH), interior knots at event-time log quantiles
"""

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.special as sps

from .data import Dataset
from .errors import ValidationError
from .likelihood import LogLikBreakdown
from .mcmc import (
    COEF_PRIOR_SD,
    FitResult,
    SamplerConfig,
    _run_model,
    compute_rhat_ess,
    compute_waic,
)

FAMILIES = (
    "exponential",
    "weibull",
    "gamma",
    "gompertz",
    "log-logistic",
    "log-normal",
    "generalized-gamma",
    "royston-parmar-ph",
    "royston-parmar-nph",
)
SPLINE_FAMILIES = ("royston-parmar-ph", "royston-parmar-nph")
_NORM = -0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ComparatorSpec:
    """A whole-curve survival model for the comparison table."""

    family: str
    covariates: tuple[str, ...] = ("Intercept", "trt")
    knots: int = 2  # interior knots, spline families only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(
                f"unknown family {self.family!r}; expected one of {FAMILIES}"
            )
        if not self.covariates or self.covariates[0] != "Intercept":
            raise ValidationError("covariates must start with 'Intercept'")
        if self.family not in SPLINE_FAMILIES and self.knots != 2:
            raise ValidationError("interior knots apply to spline families only")
        if self.knots < 0:
            raise ValidationError("knots must be >= 0")

    @property
    def p(self) -> int:
        return len(self.covariates)


def _spline_knots(ds: Dataset, n_interior: int) -> np.ndarray:
    """Boundary knots at extreme event times, interior at log quantiles."""
    events = np.array([r.time for r in ds.records if r.status == 1])
    if events.size < 2 or events.min() == events.max():
        raise ValidationError("spline comparators need at least two distinct event times")
    x = np.log(events)
    if n_interior:
        probs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        interior = np.quantile(x, probs)
    else:
        interior = np.array([])
    return np.concatenate([[x.min()], interior, [x.max()]])


def _spline_basis(x: np.ndarray, knots: np.ndarray):
    """Restricted cubic basis of log time and its derivative.

    Returns (basis, dbasis) with columns (1, x, v_1..v_m); the derivative
    columns correspond to d/dx.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kmin, kmax = knots[0], knots[-1]
    interior = knots[1:-1]
    cols = [np.ones_like(x), x]
    dcols = [np.zeros_like(x), np.ones_like(x)]
    denom = kmax - kmin
    for kj in interior:
        lam = (kmax - kj) / denom
        plus = np.maximum(x - kj, 0.0)
        plus_min = np.maximum(x - kmin, 0.0)
        plus_max = np.maximum(x - kmax, 0.0)
        cols.append(plus**3 - lam * plus_min**3 - (1.0 - lam) * plus_max**3)
        dcols.append(3.0 * (plus**2 - lam * plus_min**2 - (1.0 - lam) * plus_max**2))
    return np.column_stack(cols), np.column_stack(dcols)


class ComparatorModel:
    """Sampler adapter for one comparator family on one dataset."""

    def __init__(self, spec: ComparatorSpec, ds: Dataset):
        self.spec = spec
        self.tau_max = ds.max_time()
        self.t = ds.times()
        self.logt = np.log(self.t)
        self.v = ds.statuses()
        self.z = ds.design_matrix(spec.covariates)
        self.n_obs = self.t.shape[0]
        self.knots = None
        events = float(np.sum(self.v))
        self.crude_log_rate = math.log(max(events, 0.5) / float(np.sum(self.t)))
        p = spec.p
        beta_names = [f"beta.{c}" for c in spec.covariates]
        fam = spec.family
        if fam == "exponential":
            extra = []
        elif fam == "weibull":
            extra = ["log_shape"]
        elif fam == "gamma":
            extra = ["log_shape"]
        elif fam == "gompertz":
            extra = ["shape"]
        elif fam == "log-logistic":
            extra = ["log_shape"]
        elif fam == "log-normal":
            extra = ["log_sdlog"]
        elif fam == "generalized-gamma":
            extra = ["log_sigma", "Q"]
        else:
            self.knots = _spline_knots(ds, spec.knots)
            self.basis, self.dbasis = _spline_basis(self.logt, self.knots)
            n_gamma = self.basis.shape[1]
            beta_names = [f"gamma{j}" for j in range(n_gamma)]
            beta_names += [f"beta.{c}" for c in spec.covariates[1:]]
            extra = ["beta_slope.trt"] if fam == "royston-parmar-nph" else []
            self.n_gamma = n_gamma
        self.names = tuple(beta_names + extra)
        self._n = len(self.names)

    def __len__(self):
        return self._n

    def block_kinds(self):
        return ("coef",) * self._n

    def initial_theta(self, rng) -> np.ndarray:
        fam = self.spec.family
        theta = np.zeros(self._n)
        jitter = 0.2 * rng.standard_normal(self._n)
        if fam in SPLINE_FAMILIES:
            theta[0] = self.crude_log_rate  # gamma0 with unit slope ~ exponential
            theta[1] = 1.0
            # curvature terms swing the hazard hard; start them near zero
            jitter[2:] *= 0.05
        elif fam in ("log-normal", "generalized-gamma"):
            theta[0] = float(np.mean(self.logt))
            sd = float(np.std(self.logt)) or 1.0
            idx = self.names.index("log_sdlog" if fam == "log-normal" else "log_sigma")
            theta[idx] = math.log(sd)
        elif fam == "log-logistic":
            theta[0] = float(np.median(self.logt))
        else:
            theta[0] = self.crude_log_rate
        return theta + jitter

    def log_prior(self, theta: np.ndarray) -> float:
        w = theta / COEF_PRIOR_SD
        return self._n * (_NORM - math.log(COEF_PRIOR_SD)) - 0.5 * float(w @ w)

    def pointwise(self, theta: np.ndarray) -> np.ndarray:
        fam = self.spec.family
        t, logt, v, z = self.t, self.logt, self.v, self.z
        p = self.spec.p
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            if fam in SPLINE_FAMILIES:
                return self._pointwise_spline(theta)
            eta = z @ theta[:p]
            if fam == "exponential":
                return v * eta - np.exp(eta) * t
            if fam == "weibull":
                a = math.exp(theta[p])
                return v * (theta[p] + eta + (a - 1.0) * logt) - np.exp(eta) * t**a
            if fam == "gamma":
                alpha = math.exp(theta[p])
                lam_t = np.exp(eta) * t
                log_f = (
                    alpha * (eta + logt) - logt - lam_t - math.lgamma(alpha)
                )
                log_s = np.log(sps.gammaincc(alpha, lam_t))
                return np.where(v == 1.0, log_f, log_s)
            if fam == "gompertz":
                g = theta[p]
                lam = np.exp(eta)
                if g == 0.0:
                    big_h = lam * t
                else:
                    big_h = lam * np.expm1(g * t) / g
                return v * (eta + g * t) - big_h
            if fam == "log-logistic":
                b = math.exp(theta[p])
                w = b * (logt - eta)
                softplus = np.logaddexp(0.0, w)
                log_f = theta[p] + b * (logt - eta) - logt - 2.0 * softplus
                return np.where(v == 1.0, log_f, -softplus)
            if fam == "log-normal":
                sigma = math.exp(theta[p])
                w = (logt - eta) / sigma
                log_f = -logt - theta[p] + _NORM - 0.5 * w * w
                log_s = sps.log_ndtr(-w)
                return np.where(v == 1.0, log_f, log_s)
            if fam == "generalized-gamma":
                sigma = math.exp(theta[p])
                q_par = theta[p + 1]
                w = (logt - eta) / sigma
                if abs(q_par) < 1e-7:
                    log_f = -logt - theta[p] + _NORM - 0.5 * w * w
                    log_s = sps.log_ndtr(-w)
                    return np.where(v == 1.0, log_f, log_s)
                qi = q_par**-2
                qw = q_par * w
                log_f = (
                    math.log(abs(q_par))
                    + qi * math.log(qi)
                    - math.lgamma(qi)
                    - logt
                    - theta[p]
                    + qi * (qw - np.exp(qw))
                )
                u = qi * np.exp(qw)
                surv = sps.gammaincc(qi, u) if q_par > 0 else sps.gammainc(qi, u)
                return np.where(v == 1.0, log_f, np.log(surv))
        raise ValidationError(f"unhandled family {fam!r}")  # pragma: no cover

    def _pointwise_spline(self, theta: np.ndarray):
        v, z, logt = self.v, self.z, self.logt
        ng = self.n_gamma
        gamma = theta[:ng]
        eta = self.basis @ gamma
        deta = self.dbasis @ gamma
        pos = ng
        for c in range(1, self.spec.p):
            eta = eta + theta[pos] * z[:, c]
            pos += 1
        if self.spec.family == "royston-parmar-nph":
            trt = self.spec.covariates.index("trt")
            eta = eta + theta[pos] * z[:, trt] * logt
            deta = deta + theta[pos] * z[:, trt]
        out = np.where(
            (v == 1.0) & (deta <= 0.0),
            -np.inf,
            v * (np.log(np.maximum(deta, 1e-300)) - logt + eta) - np.exp(eta),
        )
        return out

    def log_post_pointwise(self, theta: np.ndarray):
        lp = self.log_prior(theta)
        ptw = self.pointwise(theta)
        total = float(np.sum(ptw))
        if math.isnan(total):
            return -math.inf, None
        if total == -math.inf:
            return -math.inf, None
        return lp + total, ptw

    def survival_matrix(self, params: np.ndarray, z_row: np.ndarray, ts: np.ndarray):
        return comparator_survival_matrix(self.spec, self.knots, params, z_row, ts)


def comparator_survival_matrix(
    spec: ComparatorSpec,
    knots: np.ndarray | None,
    params: np.ndarray,
    z_row: np.ndarray,
    ts: np.ndarray,
) -> np.ndarray:
    """S(t) per draw at a covariate profile; (n_draws, len(ts))."""
    fam = spec.family
    p = spec.p
    ts = np.asarray(ts, dtype=float)
    positive = ts > 0.0
    tpos = np.where(positive, ts, 1.0)[None, :]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        if fam in SPLINE_FAMILIES:
            if knots is None:
                raise ValidationError("spline survival needs the fitted knot vector")
            knots = np.asarray(knots, dtype=float)
            basis, _ = _spline_basis(np.log(tpos[0]), knots)
            n_gamma = basis.shape[1]
            eta = params[:, :n_gamma] @ basis.T
            pos = n_gamma
            for c in range(1, p):
                eta = eta + params[:, pos][:, None] * z_row[c]
                pos += 1
            if fam == "royston-parmar-nph":
                trt = spec.covariates.index("trt")
                eta = eta + params[:, pos][:, None] * z_row[trt] * np.log(tpos)
            s = np.exp(-np.exp(eta))
        else:
            eta = (params[:, :p] @ z_row)[:, None]
            if fam == "exponential":
                s = np.exp(-np.exp(eta) * tpos)
            elif fam == "weibull":
                a = np.exp(params[:, p])[:, None]
                s = np.exp(-np.exp(eta) * tpos**a)
            elif fam == "gamma":
                alpha = np.exp(params[:, p])[:, None]
                s = sps.gammaincc(alpha, np.exp(eta) * tpos)
            elif fam == "gompertz":
                g = params[:, p][:, None]
                lam = np.exp(eta)
                big_h = np.where(g == 0.0, lam * tpos, lam * np.expm1(g * tpos) / g)
                s = np.exp(-big_h)
            elif fam == "log-logistic":
                b = np.exp(params[:, p])[:, None]
                w = b * (np.log(tpos) - eta)
                s = np.exp(-np.logaddexp(0.0, w))
            elif fam == "log-normal":
                sigma = np.exp(params[:, p])[:, None]
                s = sps.ndtr(-(np.log(tpos) - eta) / sigma)
            elif fam == "generalized-gamma":
                sigma = np.exp(params[:, p])[:, None]
                q_par = params[:, p + 1][:, None]
                w = (np.log(tpos) - eta) / sigma
                qi = np.where(np.abs(q_par) < 1e-7, np.inf, q_par**-2)
                u = qi * np.exp(q_par * w)
                s = np.where(
                    np.abs(q_par) < 1e-7,
                    sps.ndtr(-w),
                    np.where(
                        q_par > 0,
                        sps.gammaincc(np.where(np.isfinite(qi), qi, 1.0), u),
                        sps.gammainc(np.where(np.isfinite(qi), qi, 1.0), u),
                    ),
                )
            else:  # pragma: no cover
                raise ValidationError(f"unhandled family {fam!r}")
    return np.where(positive[None, :], s, 1.0)


def comparator_loglik(
    spec: ComparatorSpec, params: Mapping[str, float] | np.ndarray, ds: Dataset
) -> LogLikBreakdown:
    """Pointwise log-likelihood of a comparator at fixed parameter values."""
    model = ComparatorModel(spec, ds)
    if isinstance(params, Mapping):
        missing = [n for n in model.names if n not in params]
        if missing:
            raise ValidationError(f"missing parameter values: {missing}")
        theta = np.array([float(params[n]) for n in model.names])
    else:
        theta = np.asarray(params, dtype=float)
        if theta.shape != (len(model.names),):
            raise ValidationError(
                f"expected {len(model.names)} parameters {model.names}, got {theta.shape}"
            )
    ptw = model.pointwise(theta)
    return LogLikBreakdown(float(np.sum(ptw)), ptw)


def fit_comparator(spec: ComparatorSpec, ds: Dataset, cfg: SamplerConfig) -> FitResult:
    """Fit one comparator with the shared MCMC engine."""
    if ds.n_events() == 0:
        raise ValidationError("dataset has no events; the model is not identifiable")
    model = ComparatorModel(spec, ds)
    draws = _run_model(model, cfg)
    diagnostics = compute_rhat_ess(draws)
    waic = compute_waic(draws.loglik)
    metadata = {
        "family": spec.family,
        "coef_prior_sd": COEF_PRIOR_SD,
        "knots": list(model.knots) if model.knots is not None else None,
    }
    return FitResult(spec, draws, diagnostics, waic, metadata)


def comparator_rmst_diff(fit: FitResult, t_max: float, arms=(0.0, 1.0)) -> np.ndarray:
    """Per-draw RMST difference (treated minus control) for a comparator fit."""
    from .predict import integrate_survival_draws

    spec: ComparatorSpec = fit.spec
    knots = fit.metadata.get("knots")
    values = {}
    for arm in arms:
        z = np.ones(spec.p)
        if "trt" in spec.covariates:
            z[spec.covariates.index("trt")] = arm
        values[arm] = integrate_survival_draws(
            lambda ts: comparator_survival_matrix(spec, knots, fit.draws.params, z, ts),
            t_max,
        )
    return values[arms[1]] - values[arms[0]]
