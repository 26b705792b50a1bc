"""Shared test utilities: random models/datasets and independent oracles."""

import math

import numpy as np

from cpsurv.data import Dataset, SubjectRecord, split_counting_process
from cpsurv.hazards import (
    FREE,
    ZERO,
    CteParams,
    cte_hazard_ratio,
    link_segment_params,
    weibull_cum_hazard,
    weibull_hazard,
)
from cpsurv.likelihood import ParameterState
from cpsurv.scenarios import ModelSpec
from cpsurv.special import integrate_adaptive


def make_dataset(rng, n=30, with_age=True, t_scale=1.5):
    records = []
    for i in range(n):
        covs = {"trt": float(rng.integers(0, 2))}
        if with_age:
            covs["age_scale"] = float(rng.normal())
        records.append(
            SubjectRecord(
                id=i + 1,
                time=float(t_scale * rng.weibull(1.2) + 1e-3),
                status=int(rng.integers(0, 2)),
                covariates=covs,
            )
        )
    # make sure at least one event exists
    if not any(r.status for r in records):
        records[0] = SubjectRecord(1, records[0].time, 1, records[0].covariates)
    return Dataset(tuple(records))


def free_spec(k, covariates=("Intercept", "trt", "age_scale"), family="weibull"):
    """A spec with every coefficient free (macks impose no constraints)."""
    p = len(covariates)
    scale = np.empty((p, k + 1), dtype=object)
    scale[:] = FREE
    shape = np.empty((p, k + 1), dtype=object)
    shape[:] = ZERO
    shape[0, :] = FREE
    return ModelSpec(family, k, tuple(covariates), scale, shape)


def random_state(rng, spec, tau_max, coef_sd=0.5):
    k = spec.k
    taus = np.sort(rng.uniform(0.15 * tau_max, 0.85 * tau_max, size=k))
    beta_scale = rng.normal(scale=coef_sd, size=(spec.p, k + 1))
    beta_shape = np.zeros((spec.p, k + 1))
    beta_shape[0, :] = rng.normal(scale=0.3, size=k + 1)
    omega = float(rng.uniform(0.3, 2.0)) if spec.cte else None
    if spec.cte:
        trt = spec.covariates.index("trt")
        beta_scale[trt, k] = 0.0
        # keep the shape common across arms
        beta_shape[trt, :] = 0.0
    return ParameterState(taus, beta_scale, beta_shape, omega)


def fixed_draws(spec, states):
    """PosteriorDraws holding the given states verbatim (for prediction tests)."""
    from cpsurv.likelihood import ParamLayout
    from cpsurv.mcmc import PosteriorDraws, SamplerConfig

    layout = ParamLayout(spec)
    params = np.vstack([layout.pack(s) for s in states])
    n = params.shape[0]
    cfg = SamplerConfig(n_chains=1, iterations=n, burnin=0, thin=1, seed=0)
    return PosteriorDraws(
        params=params,
        chain=np.zeros(n, dtype=np.int32),
        draw=np.arange(n, dtype=np.int32),
        param_names=layout.names,
        loglik=np.zeros((n, 1)),
        acceptance={},
        warnings=(),
        config=cfg,
        tau_max=100.0,
    )


def split_oracle_loglik(state, spec, ds):
    """Independent per-subject log-likelihood via counting-process splitting.

    Each subrecord contributes status * log h(tstop) - [H(tstop) - H(tstart)]
    with its own interval's segment parameters.
    """
    rows = split_counting_process(ds, state.taus, spec.covariates)
    per = {rec.id: 0.0 for rec in ds.records}
    for row in rows:
        p = link_segment_params(row.design_row, state.beta_scale, state.beta_shape, row.interval)
        contrib = -(weibull_cum_hazard(row.tstop, p) - weibull_cum_hazard(row.tstart, p))
        if row.status == 1:
            contrib += math.log(weibull_hazard(row.tstop, p))
        per[row.id] += contrib
    return np.array([per[rec.id] for rec in ds.records])


def cte_oracle_loglik(state, spec, ds):
    """Quadrature-based per-subject log-likelihood for converging-hazards models."""
    k = spec.k
    trt = spec.covariates.index("trt")
    tau_w = float(state.taus[-1])
    out = np.empty(len(ds.records))
    for i, rec in enumerate(ds.records):
        z = np.ones(spec.p)
        for r, name in enumerate(spec.covariates):
            if name != "Intercept":
                z[r] = rec.covariates[name]
        t = rec.time
        j = int(np.searchsorted(state.taus, t, side="left"))
        ll = 0.0
        for g in range(j + 1):
            params = link_segment_params(z, state.beta_scale, state.beta_shape, g + 1)
            lo = 0.0 if g == 0 else float(state.taus[g - 1])
            hi = t if g == j else float(state.taus[g])
            if g == k:
                hr0 = math.exp(z[trt] * state.beta_scale[trt, k - 1])
                cte = CteParams(hr_initial=hr0, omega=state.omega, tau_wane=tau_w)
                if hi > tau_w:
                    ll -= integrate_adaptive(
                        lambda s: cte_hazard_ratio(s, cte) * weibull_hazard(s, params),
                        tau_w,
                        hi,
                        tol=1e-12,
                    ).value
                if g == j and rec.status == 1:
                    ll += math.log(cte_hazard_ratio(t, cte) * weibull_hazard(t, params))
            else:
                ll -= weibull_cum_hazard(hi, params) - weibull_cum_hazard(lo, params)
                if g == j and rec.status == 1:
                    ll += math.log(weibull_hazard(t, params))
        out[i] = ll
    return out


def arm_restricted_oracle_loglik(state, spec, ds):
    """Subject-level oracle when the split applies to one arm only."""
    arm = spec.covariates.index(spec.arm_restriction)
    out = np.empty(len(ds.records))
    for i, rec in enumerate(ds.records):
        z = np.ones(spec.p)
        for r, name in enumerate(spec.covariates):
            if name != "Intercept":
                z[r] = rec.covariates[name]
        t = rec.time
        if z[arm] == 0.0:
            params = link_segment_params(z, state.beta_scale, state.beta_shape, 1)
            ll = -weibull_cum_hazard(t, params)
            if rec.status == 1:
                ll += math.log(weibull_hazard(t, params))
        else:
            j = int(np.searchsorted(state.taus, t, side="left"))
            ll = 0.0
            for g in range(j + 1):
                params = link_segment_params(z, state.beta_scale, state.beta_shape, g + 1)
                lo = 0.0 if g == 0 else float(state.taus[g - 1])
                hi = t if g == j else float(state.taus[g])
                ll -= weibull_cum_hazard(hi, params) - weibull_cum_hazard(lo, params)
                if g == j and rec.status == 1:
                    ll += math.log(weibull_hazard(t, params))
        out[i] = ll
    return out
