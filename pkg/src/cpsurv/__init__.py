"""Bayesian change-point survival models for relative treatment effect scenarios."""

__version__ = "0.1.0"

from .comparators import ComparatorSpec, comparator_loglik, fit_comparator
from .data import (
    ColumnSchema,
    CountingProcessRow,
    Dataset,
    SubjectRecord,
    load_dataset,
    split_counting_process,
    standardize_covariate,
)
from .hazards import (
    CoefficientMatrix,
    CteParams,
    SegmentParams,
    cte_cum_hazard_increment,
    cte_hazard_ratio,
    link_segment_params,
    segment_cum_hazard_increment,
    weibull_cum_hazard,
    weibull_hazard,
)
from .likelihood import (
    LogLikBreakdown,
    ParameterState,
    interval_index,
    log_likelihood,
    log_posterior,
    log_prior_changepoints,
    log_prior_coefficients,
)
from .mcmc import (
    Diagnostics,
    FitResult,
    PosteriorDraws,
    SamplerConfig,
    compute_rhat_ess,
    compute_waic,
    fit_changepoint,
    run_sampler,
)
from .predict import CurveRequest, CurveSummary, hr_curve, rmst, rmst_diff, survival_curve
from .scenarios import ModelSpec, ScenarioPreset, count_free_parameters, expand_preset
from .simstudy import SimScenario, run_study, simulate_dataset, true_rmst_diff
from .special import (
    QuadratureResult,
    integrate_adaptive,
    log_gamma,
    upper_incomplete_gamma,
)

__all__ = [name for name in dir() if not name.startswith("_")]
