"""Adaptive random-walk Metropolis-within-Gibbs sampler, diagnostics and WAIC.

Every free parameter is its own update block. Change-points are proposed on a
logit scale mapped to their conditional interval (so ordering can never break)
and the waning rate omega on the log scale. Proposal step sizes adapt by
Robbins-Monro toward a 0.44 acceptance rate during burn-in only; the kernel is
fixed afterwards so the post-burn-in chain is Markovian.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .data import Dataset
from .errors import ValidationError
from .likelihood import (
    COEF_PRIOR_SD,
    LOG10,
    ParamLayout,
    _coef_log_prior,
    kernel_inputs,
    log_prior_changepoints,
)
from .scenarios import ModelSpec

TARGET_ACCEPT = 0.44


@dataclass(frozen=True)
class SamplerConfig:
    """Chain geometry and adaptation settings.

    Defaults mirror the applications setup (2 chains of 55,000 with 5,000
    burn-in, thinning 5, keeping 20,000 draws); :meth:`simulation` gives the
    lighter setup used by the simulation harness.
    """

    n_chains: int = 2
    iterations: int = 55_000
    burnin: int = 5_000
    thin: int = 5
    seed: int = 0
    target_accept: float = TARGET_ACCEPT
    threads: int = 1
    tau_max: float | None = None
    prior_only: bool = False

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValidationError("n_chains must be >= 1")
        if not (self.iterations > self.burnin >= 0):
            raise ValidationError("need iterations > burnin >= 0")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if not (0.0 < self.target_accept < 1.0):
            raise ValidationError("target_accept must be in (0, 1)")

    @classmethod
    def simulation(cls, seed: int = 0, **overrides) -> "SamplerConfig":
        base = dict(iterations=20_000, burnin=2_000, thin=4, seed=seed)
        base.update(overrides)
        return cls(**base)

    @property
    def retained_per_chain(self) -> int:
        return (self.iterations - self.burnin) // self.thin


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained states on the natural scale plus per-draw pointwise log-likelihoods."""

    params: np.ndarray  # (n_draws_total, n_params)
    chain: np.ndarray  # (n_draws_total,)
    draw: np.ndarray  # index within chain
    param_names: tuple[str, ...]
    loglik: np.ndarray  # (n_draws_total, n_observations)
    acceptance: Mapping[int, Mapping[str, float]]
    warnings: tuple[str, ...]
    config: SamplerConfig
    tau_max: float

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1 if self.chain.size else 0

    def column(self, name: str) -> np.ndarray:
        return self.params[:, self.param_names.index(name)]

    def by_chain(self, name: str) -> list[np.ndarray]:
        col = self.column(name)
        return [col[self.chain == c] for c in range(self.n_chains)]


@dataclass(frozen=True)
class Diagnostics:
    """Split-chain R-hat and autocorrelation ESS per parameter.

    ``rhat``/``ess`` hold None for degenerate (zero-variance) parameters.
    """

    rhat: Mapping[str, float | None]
    ess: Mapping[str, float | None]
    acceptance: Mapping[int, Mapping[str, float]]
    warnings: tuple[str, ...] = ()

    def max_rhat(self) -> float | None:
        values = [v for v in self.rhat.values() if v is not None]
        return max(values) if values else None


@dataclass(frozen=True)
class FitResult:
    spec: object
    draws: PosteriorDraws
    diagnostics: Diagnostics
    waic: float
    metadata: Mapping[str, object] = field(default_factory=dict)


class ChangePointModel:
    """Posterior evaluation bundle for a change-point spec over one dataset."""

    def __init__(self, spec: ModelSpec, ds: Dataset, tau_max: float | None = None,
                 prior_only: bool = False):
        self.spec = spec
        self.layout = ParamLayout(spec)
        self.tau_max = float(tau_max) if tau_max is not None else ds.max_time()
        self.prior_only = prior_only
        (
            self.time,
            self.logt,
            self.status,
            self.zu,
            self.row_idx,
            self.trt_col,
            self.arm_col,
        ) = kernel_inputs(spec, ds)
        self.n_obs = self.time.shape[0]
        self.crude_log_rate = math.log(
            max(float(np.sum(self.status)), 0.5) / float(np.sum(self.time))
        )

    @property
    def names(self):
        return self.layout.names

    def block_kinds(self):
        return tuple(e.kind for e in self.layout.entries)

    def initial_theta(self, rng) -> np.ndarray:
        spec = self.spec
        k = spec.k
        theta = np.empty(len(self.layout))
        if k:
            lo, hi = 0.25 * self.tau_max, 0.75 * self.tau_max
            theta[:k] = np.sort(rng.uniform(lo, hi, size=k))
        for i, entry in enumerate(self.layout.entries):
            if entry.kind == "tau":
                continue
            if entry.kind == "omega":
                theta[i] = math.exp(0.3 * rng.standard_normal())
            elif entry.is_intercept:
                base = self.crude_log_rate if entry.side == "scale" else 0.0
                theta[i] = min(base + 0.3 * rng.standard_normal(), LOG10 - 0.5)
            else:
                theta[i] = 0.25 * rng.standard_normal()
        return theta

    def log_prior(self, theta: np.ndarray) -> float:
        spec = self.spec
        total = log_prior_changepoints(theta[: spec.k], self.tau_max, spec.k)
        if total == -math.inf:
            return -math.inf
        for value, entry in zip(theta[spec.k:], self.layout.entries[spec.k:]):
            if entry.kind == "omega":
                if not (value > 0.0):
                    return -math.inf
                total += _coef_log_prior(math.log(value), is_intercept=False)
            else:
                total += _coef_log_prior(float(value), entry.is_intercept)
            if total == -math.inf:
                return -math.inf
        return total

    def log_post_pointwise(self, theta: np.ndarray):
        lp = self.log_prior(theta)
        if lp == -math.inf:
            return -math.inf, None
        if self.prior_only:
            return lp, np.zeros(self.n_obs)
        state = self.layout.unpack(theta)
        omega = float(state.omega) if self.spec.cte else 0.0
        per_obs = kernels.loglik_cp(
            self.time,
            self.logt,
            self.status,
            self.zu,
            self.row_idx,
            state.taus,
            state.beta_scale,
            state.beta_shape,
            self.spec.cte,
            self.trt_col,
            omega,
            self.arm_col,
        )
        total = float(np.sum(per_obs))
        if math.isnan(total):
            return -math.inf, None
        return lp + total, per_obs


def _tau_bounds(theta, j, k, tau_max):
    lo = theta[j - 1] if j > 0 else 0.0
    hi = theta[j + 1] if j < k - 1 else tau_max
    return lo, hi


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _run_chain(model, cfg: SamplerConfig, chain_idx: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(chain_idx,)))
    kinds = model.block_kinds()
    k = kinds.count("tau")
    n_blocks = len(kinds)

    theta = model.initial_theta(rng)
    lp, ptw = model.log_post_pointwise(theta)
    attempts = 0
    while lp == -math.inf and attempts < 100:
        theta = model.initial_theta(rng)
        lp, ptw = model.log_post_pointwise(theta)
        attempts += 1
    if lp == -math.inf:
        raise ValidationError("could not find a finite-posterior starting state")

    log_step = np.zeros(n_blocks)
    for b in range(n_blocks):
        log_step[b] = 0.0 if kinds[b] == "tau" else math.log(0.5)

    adapt_accepts = np.zeros(n_blocks, dtype=np.int64)
    post_accepts = np.zeros(n_blocks, dtype=np.int64)
    n_keep = cfg.retained_per_chain
    kept = np.empty((n_keep, n_blocks))
    kept_ll = np.empty((n_keep, model.n_obs))
    keep_idx = 0

    for it in range(cfg.iterations):
        zs = rng.standard_normal(n_blocks)
        log_us = np.log(rng.random(n_blocks))
        adapting = it < cfg.burnin
        for b in range(n_blocks):
            # a hard cap keeps exp() finite even if adaptation overshoots
            step = max(min(math.exp(min(log_step[b], 5.0)) * zs[b], 50.0), -50.0)
            kind = kinds[b]
            degenerate = False
            prop = theta
            log_jac = 0.0
            if kind == "tau":
                lo, hi = _tau_bounds(theta, b, k, model.tau_max)
                width = hi - lo
                frac = (theta[b] - lo) / width
                if not (0.0 < frac < 1.0):
                    continue
                y_new = _logit(frac) + step
                frac_new = 1.0 / (1.0 + math.exp(-y_new))
                if 0.0 < frac_new < 1.0:
                    prop = theta.copy()
                    prop[b] = lo + width * frac_new
                    # random walk happens on the logit scale; fold in its Jacobian
                    log_jac = (
                        math.log(frac_new) + math.log1p(-frac_new)
                        - math.log(frac) - math.log1p(-frac)
                    )
                else:
                    degenerate = True  # proposal collapsed onto a bound
            elif kind == "omega":
                prop = theta.copy()
                prop[b] = theta[b] * math.exp(step)
                # prior is a density in log(omega) already, no Jacobian
            else:
                prop = theta.copy()
                prop[b] = theta[b] + step
            if degenerate:
                log_ratio = -math.inf
                lp_new, ptw_new = -math.inf, None
            else:
                lp_new, ptw_new = model.log_post_pointwise(prop)
                log_ratio = lp_new - lp + log_jac
                if math.isnan(log_ratio):
                    log_ratio = -math.inf
            if log_us[b] < log_ratio:
                theta = prop
                lp = lp_new
                ptw = ptw_new
                if adapting:
                    adapt_accepts[b] += 1
                else:
                    post_accepts[b] += 1
            if adapting:
                alpha = min(1.0, math.exp(min(log_ratio, 0.0)))
                log_step[b] += (it + 1) ** -0.6 * (alpha - cfg.target_accept)
                log_step[b] = max(min(log_step[b], 5.0), -15.0)
        if not adapting:
            offset = it - cfg.burnin
            if (offset + 1) % cfg.thin == 0 and keep_idx < n_keep:
                kept[keep_idx] = theta
                kept_ll[keep_idx] = ptw
                keep_idx += 1

    post_iters = cfg.iterations - cfg.burnin
    acceptance = {
        model.names[b]: post_accepts[b] / post_iters for b in range(n_blocks)
    }
    warnings = []
    for b in range(n_blocks):
        if cfg.burnin > 0 and adapt_accepts[b] == 0:
            warnings.append(
                f"chain {chain_idx}: block '{model.names[b]}' accepted no proposals "
                "during adaptation (stuck sampler)"
            )
        rate = acceptance[model.names[b]]
        if not (0.05 < rate < 0.95):
            warnings.append(
                f"chain {chain_idx}: block '{model.names[b]}' acceptance rate "
                f"{rate:.3f} outside (0.05, 0.95)"
            )
    return kept, kept_ll, acceptance, warnings


def run_sampler(spec: ModelSpec, ds: Dataset, cfg: SamplerConfig) -> PosteriorDraws:
    """Draw posterior samples for a change-point model.

    Chains use independent seed-derived streams, so serial and threaded
    execution produce identical draws.
    """
    model = ChangePointModel(spec, ds, tau_max=cfg.tau_max, prior_only=cfg.prior_only)
    if not cfg.prior_only and ds.n_events() == 0:
        raise ValidationError("dataset has no events; the model is not identifiable")
    return _run_model(model, cfg)


def _run_model(model, cfg: SamplerConfig) -> PosteriorDraws:
    """Sampler core shared by change-point and comparator models."""
    chain_ids = list(range(cfg.n_chains))
    if cfg.threads > 1 and cfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda c: _run_chain(model, cfg, c), chain_ids))
    else:
        results = [_run_chain(model, cfg, c) for c in chain_ids]

    n_keep = cfg.retained_per_chain
    params = np.vstack([r[0] for r in results])
    loglik = np.vstack([r[1] for r in results])
    chain = np.repeat(np.arange(cfg.n_chains, dtype=np.int32), n_keep)
    draw = np.tile(np.arange(n_keep, dtype=np.int32), cfg.n_chains)
    acceptance = {c: results[c][2] for c in chain_ids}
    warnings = tuple(w for r in results for w in r[3])
    return PosteriorDraws(
        params=params,
        chain=chain,
        draw=draw,
        param_names=model.names,
        loglik=loglik,
        acceptance=acceptance,
        warnings=warnings,
        config=cfg,
        tau_max=model.tau_max,
    )


def _split_chains(series_by_chain: Sequence[np.ndarray]) -> np.ndarray:
    halves = []
    for s in series_by_chain:
        n = len(s) // 2
        halves.append(s[:n])
        halves.append(s[len(s) - n:])
    return np.asarray(halves)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    centered = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    fft = np.fft.rfft(centered, size)
    acov = np.fft.irfft(fft * np.conj(fft), size)[:n].real
    return acov / n


def _ess_single(chains: np.ndarray) -> float:
    """Effective sample size from combined-chain autocorrelations.

    Uses the multi-chain variance estimate with Geyer's initial positive
    sequence truncation.
    """
    m, n = chains.shape
    within = chains.var(axis=1, ddof=1).mean()
    between = n * chains.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * within + between / n
    if var_plus <= 0.0:
        return math.nan
    acov = np.vstack([_autocovariance(c) for c in chains])
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0.0:
            break
        tau += 2.0 * pair
        t += 2
    ess = m * n / tau
    return min(ess, m * n)


def compute_rhat_ess(draws: PosteriorDraws) -> Diagnostics:
    """Split-chain potential scale reduction and autocorrelation ESS.

    Requires at least two chains with 100 retained draws each. Constant
    parameters report None rather than NaN.
    """
    if draws.n_chains < 2:
        raise ValidationError("R-hat needs at least 2 chains")
    per_chain = draws.config.retained_per_chain
    if per_chain < 100:
        raise ValidationError("R-hat needs at least 100 retained draws per chain")
    rhat: dict[str, float | None] = {}
    ess: dict[str, float | None] = {}
    for name in draws.param_names:
        series = draws.by_chain(name)
        split = _split_chains(series)
        if np.ptp(split) == 0.0:
            rhat[name] = None
            ess[name] = None
            continue
        m, n = split.shape
        within = split.var(axis=1, ddof=1).mean()
        between = n * split.mean(axis=1).var(ddof=1)
        if within <= 0.0:
            rhat[name] = math.inf
            ess[name] = None
            continue
        var_plus = (n - 1) / n * within + between / n
        rhat[name] = float(math.sqrt(var_plus / within))
        ess[name] = float(_ess_single(split))
    return Diagnostics(rhat=rhat, ess=ess, acceptance=draws.acceptance,
                       warnings=draws.warnings)


def compute_waic(loglik_matrix: np.ndarray) -> float:
    """WAIC = -2 * (lppd - p_waic) from a draws-by-observations matrix.

    lppd uses a max-stabilized log-mean-exp per observation; p_waic is the sum
    of per-observation sample variances (ddof=1).
    """
    ll = np.asarray(loglik_matrix, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValidationError("WAIC needs a 2-d matrix with at least 2 draws")
    if not np.all(np.isfinite(ll)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(ll), axis=0))[0])
        raise ValidationError(f"non-finite log-likelihood for observation {bad}")
    s = ll.shape[0]
    peak = ll.max(axis=0)
    lppd = float(np.sum(peak + np.log(np.mean(np.exp(ll - peak), axis=0))))
    p_waic = float(np.sum(ll.var(axis=0, ddof=1)))
    return -2.0 * (lppd - p_waic)


def export_draws_csv(draws: PosteriorDraws, fh) -> None:
    """Write retained draws as CSV with draw, chain and one column per parameter."""
    fh.write("draw,chain," + ",".join(draws.param_names) + "\n")
    for i in range(draws.params.shape[0]):
        values = ",".join(repr(float(v)) for v in draws.params[i])
        fh.write(f"{int(draws.draw[i])},{int(draws.chain[i])},{values}\n")


def summary_dict(fit: FitResult) -> dict:
    """JSON-ready summary: per-parameter median, 95% CrI, R-hat, ESS, plus WAIC."""
    draws = fit.draws
    params = {}
    for name in draws.param_names:
        col = draws.column(name)
        lo, med, hi = np.percentile(col, [2.5, 50.0, 97.5])
        params[name] = {
            "median": float(med),
            "lo95": float(lo),
            "hi95": float(hi),
            "rhat": fit.diagnostics.rhat.get(name),
            "ess": fit.diagnostics.ess.get(name),
        }
    return {
        "parameters": params,
        "waic": fit.waic,
        "n_draws": int(draws.params.shape[0]),
        "n_chains": draws.n_chains,
        "tau_max": draws.tau_max,
        "warnings": list(draws.warnings),
        "metadata": {k: v for k, v in fit.metadata.items()},
    }


def fit_changepoint(
    spec: ModelSpec, ds: Dataset, cfg: SamplerConfig
) -> FitResult:
    """Sample, diagnose and score a change-point model in one call."""
    draws = run_sampler(spec, ds, cfg)
    diagnostics = compute_rhat_ess(draws)
    waic = compute_waic(draws.loglik)
    metadata = {
        "coef_prior_sd": COEF_PRIOR_SD,
        "intercept_prior": "uniform(0,10) on the natural scale",
        "tau_max": draws.tau_max,
        "model": spec.to_json_dict(),
    }
    return FitResult(spec, draws, diagnostics, waic, metadata)
