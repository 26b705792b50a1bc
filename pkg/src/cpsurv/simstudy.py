"""Simulation harness: generate change-point truths, fit models, score Err_diff.

Scenario kinds follow the three relative-treatment-effect shapes: TD (equal
hazards until tau, proportional hazards after), LTE (treatment effect until
tau, equal hazards after) and CTE (treatment effect whose hazard ratio decays
toward 1 beyond tau at rate omega). The control arm is always Weibull with the
baseline shape/scale.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .comparators import ComparatorSpec, comparator_rmst_diff, fit_comparator
from .data import Dataset, SubjectRecord
from .errors import ValidationError
from .mcmc import FitResult, SamplerConfig, fit_changepoint
from .predict import CurveRequest, rmst_diff
from .scenarios import ModelSpec, ScenarioPreset, expand_preset
from .special import _cte_increment, integrate_adaptive

KINDS = ("TD", "LTE", "CTE")
CHANGEPOINT_MODEL = "changepoint"
PRESET_BY_KIND = {
    "TD": ScenarioPreset.TREATMENT_DELAY,
    "LTE": ScenarioPreset.LOSS_OF_EFFECT,
    "CTE": ScenarioPreset.CONVERGING_HAZARDS,
}


@dataclass(frozen=True)
class SimScenario:
    """One cell of the simulation grid."""

    kind: str
    shape: float
    hr: float
    tau: float
    n_per_arm: int
    t_cens: float
    scale: float = 0.3
    omega: float = 1.0
    t_max: float = 15.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("shape", "tau", "scale", "omega", "t_cens", "t_max"):
            if not (getattr(self, name) > 0.0):
                raise ValidationError(f"{name} must be positive")
        if not (0.0 < self.hr <= 1.0):
            raise ValidationError(f"hr must be in (0, 1], got {self.hr}")
        if self.n_per_arm < 1:
            raise ValidationError("n_per_arm must be >= 1")

    def label(self) -> dict:
        out = {
            "kind": self.kind,
            "n_samp": self.n_per_arm,
            "t_cens": self.t_cens,
            "HR": self.hr,
            "shape": self.shape,
        }
        if self.kind == "CTE":
            out["omega"] = self.omega
        return out


def control_cum_hazard(sc: SimScenario, t: float) -> float:
    return sc.scale * t**sc.shape


def treated_cum_hazard(sc: SimScenario, t: float) -> float:
    m, a, r, tau = sc.scale, sc.shape, sc.hr, sc.tau
    if sc.kind == "TD":
        if t <= tau:
            return m * t**a
        return m * tau**a + r * m * (t**a - tau**a)
    if sc.kind == "LTE":
        if t <= tau:
            return r * m * t**a
        return r * m * tau**a + m * (t**a - tau**a)
    # CTE: proportional hazards before tau, waning hazard ratio after
    if t <= tau:
        return r * m * t**a
    return r * m * tau**a + _cte_increment(a, m, r, sc.omega, tau, t)[0]


def true_survival(sc: SimScenario, arm: int, t: float) -> float:
    h = control_cum_hazard(sc, t) if arm == 0 else treated_cum_hazard(sc, t)
    return math.exp(-h)


def _invert_treated(sc: SimScenario, target: float) -> float:
    """Solve H_treated(t) = target for t."""
    m, a, r, tau = sc.scale, sc.shape, sc.hr, sc.tau
    if sc.kind == "TD":
        h_tau = m * tau**a
        if target <= h_tau:
            return (target / m) ** (1.0 / a)
        return (tau**a + (target - h_tau) / (r * m)) ** (1.0 / a)
    if sc.kind == "LTE":
        h_tau = r * m * tau**a
        if target <= h_tau:
            return (target / (r * m)) ** (1.0 / a)
        return (tau**a + (target - h_tau) / m) ** (1.0 / a)
    h_tau = r * m * tau**a
    if target <= h_tau:
        return (target / (r * m)) ** (1.0 / a)
    hi = 2.0 * tau
    while treated_cum_hazard(sc, hi) < target:
        hi *= 2.0
        if hi > 1e12:  # pragma: no cover
            raise ValidationError("could not bracket the event-time inversion")
    return float(
        brentq(lambda t: treated_cum_hazard(sc, t) - target, tau, hi, xtol=1e-10)
    )


def simulate_dataset(sc: SimScenario, rep_seed: int) -> Dataset:
    """Draw one dataset by inversion, administratively censored at t_cens."""
    rng = np.random.default_rng(rep_seed)
    records = []
    next_id = 1
    for arm in (0, 1):
        expo = rng.standard_exponential(sc.n_per_arm)
        for e in expo:
            if arm == 0:
                t = (e / sc.scale) ** (1.0 / sc.shape)
            else:
                t = _invert_treated(sc, float(e))
            status = 1
            if t >= sc.t_cens:
                t, status = sc.t_cens, 0
            records.append(
                SubjectRecord(next_id, float(t), status, {"trt": float(arm)})
            )
            next_id += 1
    return Dataset(tuple(records))


def true_rmst_diff(sc: SimScenario) -> float:
    """Restricted mean survival difference of the generating model over [0, t_max]."""

    def diff(t):
        return true_survival(sc, 1, t) - true_survival(sc, 0, t)

    total = 0.0
    for lo, hi in ((0.0, min(sc.tau, sc.t_max)), (min(sc.tau, sc.t_max), sc.t_max)):
        if hi > lo:
            total += integrate_adaptive(diff, lo, hi, tol=1e-9).value
    return total


def changepoint_spec_for(sc: SimScenario) -> ModelSpec:
    return expand_preset(PRESET_BY_KIND[sc.kind], ("Intercept", "trt"), k=1)


@dataclass(frozen=True)
class ModelScore:
    model: str
    rmst_diff_median: float
    abs_error: float
    max_rhat: float | None
    failed: bool
    posterior_medians: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class StudyResult:
    """Err_diff per (scenario, model) plus parameter-recovery statistics."""

    rows: tuple[dict, ...]  # one per scenario: label fields + per-model Err_diff
    failures: tuple[dict, ...]
    param_stats: tuple[dict, ...]
    replicates: int

    def err_diff(self, scenario_index: int, model: str) -> float:
        return self.rows[scenario_index][model]

    def to_csv(self, fh) -> None:
        if not self.rows:
            return
        label_keys = [k for k in self.rows[0] if k not in self._model_keys()]
        models = self._model_keys()
        fh.write(",".join(label_keys + models) + "\n")
        for row in self.rows:
            fields = [str(row[k]) for k in label_keys]
            fields += [f"{row[m]:.6g}" if row[m] == row[m] else "NA" for m in models]
            fh.write(",".join(fields) + "\n")

    def _model_keys(self):
        label = {"kind", "n_samp", "t_cens", "HR", "shape", "omega"}
        return [k for k in self.rows[0] if k not in label]

    def params_to_csv(self, fh) -> None:
        fh.write("kind,n_samp,t_cens,HR,shape,param,mean,sd\n")
        for row in self.param_stats:
            fh.write(
                f"{row['kind']},{row['n_samp']},{row['t_cens']},{row['HR']},"
                f"{row['shape']},{row['param']},{row['mean']:.6g},{row['sd']:.6g}\n"
            )


def _natural_medians(fit: FitResult, spec: ModelSpec) -> dict[str, float]:
    """Posterior medians of the interpretable quantities (tau, HR, shape, scale)."""
    draws = fit.draws
    out = {}
    if "tau1" in draws.param_names:
        out["tau"] = float(np.median(draws.column("tau1")))
    trt_cols = [n for n in draws.param_names if n.startswith("scale.trt")]
    if trt_cols:
        out["hr"] = float(np.median(np.exp(draws.column(trt_cols[0]))))
    if "shape.Intercept" in draws.param_names:
        out["shape"] = float(np.median(np.exp(draws.column("shape.Intercept"))))
    scale_cols = [n for n in draws.param_names if n.startswith("scale.Intercept")]
    if scale_cols:
        out["scale"] = float(np.median(np.exp(draws.column(scale_cols[0]))))
    if "omega" in draws.param_names:
        out["omega"] = float(np.median(draws.column("omega")))
    return out


def fit_and_score(
    sc: SimScenario, model: str, ds: Dataset, cfg: SamplerConfig, truth: float,
    rhat_limit: float = 1.1,
) -> ModelScore:
    """Fit one model to one replicate and score its RMST_diff error."""
    if model == CHANGEPOINT_MODEL:
        spec = changepoint_spec_for(sc)
        fit = fit_changepoint(spec, ds, cfg)
        req = CurveRequest(t_max=sc.t_max)
        median = float(rmst_diff(fit.draws, spec, req).median)
        medians = _natural_medians(fit, spec)
    else:
        fit = fit_comparator(ComparatorSpec(family=model), ds, cfg)
        median = float(np.median(comparator_rmst_diff(fit, sc.t_max)))
        medians = {}
    max_rhat = fit.diagnostics.max_rhat()
    failed = max_rhat is not None and max_rhat > rhat_limit
    return ModelScore(
        model=model,
        rmst_diff_median=median,
        abs_error=abs(median - truth),
        max_rhat=max_rhat,
        failed=failed,
        posterior_medians=medians,
    )


def run_study(
    scenarios: Sequence[SimScenario],
    models: Sequence[str],
    cfg: SamplerConfig | None = None,
    replicates: int = 20,
    seed: int = 0,
    threads: int = 1,
    rhat_limit: float = 1.1,
) -> StudyResult:
    """Run the full grid: replicates x scenarios x models.

    Fits whose split R-hat exceeds ``rhat_limit`` count toward a reported
    failure rate and are excluded from Err_diff, never silently dropped.
    Replicate seeds derive from (seed, scenario index, replicate index) so
    parallel execution cannot change any result.
    """
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    if not scenarios:
        raise ValidationError("no scenarios given")
    if not models:
        raise ValidationError("no models given")
    base_cfg = cfg if cfg is not None else SamplerConfig.simulation()

    tasks = []
    for si, sc in enumerate(scenarios):
        for ri in range(replicates):
            tasks.append((si, ri))

    truths = [true_rmst_diff(sc) for sc in scenarios]

    def run_task(task):
        si, ri = task
        sc = scenarios[si]
        data_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(si, ri)).generate_state(1)[0]
        )
        ds = simulate_dataset(sc, data_seed)
        scores = []
        for mi, model in enumerate(models):
            fit_seed = int(
                np.random.SeedSequence(
                    entropy=seed, spawn_key=(si, ri, mi + 1)
                ).generate_state(1)[0]
            )
            cfg_m = replace(base_cfg, seed=fit_seed, tau_max=None)
            scores.append(fit_and_score(sc, model, ds, cfg_m, truths[si], rhat_limit))
        return task, scores

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(run_task, tasks))
    else:
        results = dict(map(run_task, tasks))

    rows = []
    failures = []
    param_stats = []
    for si, sc in enumerate(scenarios):
        row = sc.label()
        medians_by_param: dict[str, list[float]] = {}
        for mi, model in enumerate(models):
            errors = []
            failed = 0
            for ri in range(replicates):
                score = results[(si, ri)][mi]
                if score.failed:
                    failed += 1
                    continue
                errors.append(score.abs_error)
                if model == CHANGEPOINT_MODEL:
                    for pname, val in score.posterior_medians.items():
                        medians_by_param.setdefault(pname, []).append(val)
            row[model] = float(np.mean(errors)) if errors else math.nan
            if failed:
                failures.append(
                    {**sc.label(), "model": model, "failed": failed, "of": replicates}
                )
        rows.append(row)
        for pname, values in medians_by_param.items():
            param_stats.append(
                {
                    **{k: sc.label()[k] for k in ("kind", "n_samp", "t_cens", "HR", "shape")},
                    "param": pname,
                    "mean": float(np.mean(values)),
                    "sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                }
            )
    return StudyResult(
        rows=tuple(rows),
        failures=tuple(failures),
        param_stats=tuple(param_stats),
        replicates=replicates,
    )
