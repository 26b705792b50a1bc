"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines
live. The heavy recovery criteria (5-7) take a few minutes each; the whole
module stays well inside a 30-minute desktop budget.
"""

import math
import os
import time as walltime
from pathlib import Path

import numpy as np
import pytest
import scipy.special as sps
from helpers import free_spec, make_dataset, random_state, split_oracle_loglik

from cpsurv.cli import main as cli_main
from cpsurv.comparators import ComparatorSpec, fit_comparator
from cpsurv.data import Dataset, SubjectRecord, load_dataset, ColumnSchema, standardize_covariate
from cpsurv.hazards import CteParams, SegmentParams, cte_cum_hazard_increment, cte_hazard_ratio, weibull_hazard
from cpsurv.likelihood import log_likelihood, log_prior_changepoints
from cpsurv.mcmc import SamplerConfig, _ess_single, fit_changepoint, run_sampler
from cpsurv.predict import CurveRequest, rmst_diff
from cpsurv.scenarios import ScenarioPreset, expand_preset
from cpsurv.simstudy import (
    SimScenario,
    changepoint_spec_for,
    simulate_dataset,
    true_rmst_diff,
    true_survival,
)
from cpsurv.special import integrate_adaptive

REPO = Path(__file__).resolve().parent.parent


def report(criterion: int, passed: bool, detail: str):
    line = f"ACCEPTANCE {criterion:02d}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line, flush=True)
    assert passed, line


class TestCriterion01SplittingOracle:
    def test_likelihood_equals_counting_process_sum(self):
        rng = np.random.default_rng(11001)
        start = walltime.perf_counter()
        worst = 0.0
        for _ in range(100):
            k = int(rng.integers(1, 3))
            spec = free_spec(k)
            ds = make_dataset(rng, n=int(rng.integers(5, 60)))
            state = random_state(rng, spec, tau_max=ds.max_time())
            got = log_likelihood(state, spec, ds).per_observation
            oracle = split_oracle_loglik(state, spec, ds)
            worst = max(worst, float(np.max(np.abs(got - oracle))))
        elapsed = walltime.perf_counter() - start
        report(
            1,
            worst < 1e-10 and elapsed < 10.0,
            f"max deviation {worst:.2e} over 100 triples in {elapsed:.1f}s",
        )


class TestCriterion02CteClosedForm:
    def test_closed_form_agrees_with_quadrature_on_grid(self):
        start = walltime.perf_counter()
        tau_w = 0.7
        worst = 0.0
        count = 0
        for a in np.linspace(0.5, 2.0, 5):
            for omega in np.linspace(0.2, 5.0, 5):
                for hr0 in np.linspace(0.1, 0.9, 4):
                    for t in (1.1, 4.0):
                        base = SegmentParams(shape=float(a), scale=0.4)
                        cte = CteParams(hr_initial=float(hr0), omega=float(omega),
                                        tau_wane=tau_w)
                        got = cte_cum_hazard_increment(t, base, cte)
                        ref = integrate_adaptive(
                            lambda s: cte_hazard_ratio(s, cte) * weibull_hazard(s, base),
                            tau_w,
                            t,
                            tol=1e-12,
                        ).value
                        worst = max(worst, abs(got - ref) / abs(ref))
                        count += 1
        elapsed = walltime.perf_counter() - start
        report(
            2,
            worst <= 1e-8 and elapsed < 30.0 and count == 200,
            f"max relative deviation {worst:.2e} over {count} grid points in {elapsed:.1f}s",
        )


class TestCriterion03PriorNormalization:
    def test_k1_prior_integrates_to_one(self):
        worst = 0.0
        for tau_max in (1.0, 3.0, 10.0):
            res = integrate_adaptive(
                lambda t: math.exp(log_prior_changepoints([t], tau_max, 1)),
                0.0,
                tau_max,
                tol=1e-9,
            )
            worst = max(worst, abs(res.value - 1.0))
        report(3, worst <= 1e-6, f"max |integral - 1| = {worst:.2e} over tau_max in 1,3,10")


class TestCriterion04ConjugateRecovery:
    def test_exponential_posterior_mean(self):
        from cpsurv.scenarios import ModelSpec
        from cpsurv.hazards import FREE, ZERO

        spec = ModelSpec(
            "exponential", 0, ("Intercept",),
            np.array([[FREE]], dtype=object), np.array([[ZERO]], dtype=object),
        )
        # A correct sampler produces N(0,1) z-scores, so demanding every seed
        # stay inside 2 MCSE would fail ~37% of the time by chance alone; the
        # across-seed check pools the 10 standardized deviations, which is
        # both stable and far more sensitive to genuine bias.
        zs = []
        for seed in range(10):
            rng = np.random.default_rng(5000 + seed)
            records = []
            for i in range(80):
                t = float(rng.exponential(1.0 / 0.7))
                status = 1
                if t >= 3.0:
                    t, status = 3.0, 0
                records.append(SubjectRecord(i + 1, t, status, {}))
            ds = Dataset(tuple(records))
            cfg = SamplerConfig(n_chains=2, iterations=9000, burnin=1000, thin=1, seed=seed)
            draws = run_sampler(spec, ds, cfg)
            lam = np.exp(draws.column("scale.Intercept"))
            alpha = ds.n_events() + 1.0
            rate = float(np.sum(ds.times()))
            truth = (alpha / rate) * sps.gammainc(alpha + 1.0, 10.0 * rate) / sps.gammainc(
                alpha, 10.0 * rate
            )
            chains = np.asarray([lam[draws.chain == c] for c in range(2)])
            mcse = lam.std(ddof=1) / math.sqrt(_ess_single(chains))
            zs.append((lam.mean() - truth) / mcse)
        pooled = abs(float(np.mean(zs))) * math.sqrt(len(zs))
        report(
            4,
            pooled <= 2.0,
            f"pooled posterior-mean deviation {pooled:.2f} MCSE across 10 seeds "
            f"(per-seed |z| max {max(abs(z) for z in zs):.2f})",
        )


def _td_scenario(t_cens: float, n: int) -> SimScenario:
    return SimScenario(
        kind="TD", shape=1.3, hr=0.25, tau=1.0, n_per_arm=n, t_cens=t_cens
    )


def _fit_td_replicates(sc: SimScenario, replicates: int, seed: int, cfg: SamplerConfig):
    """Err_diff and posterior tau medians for the change-point model."""
    truth = true_rmst_diff(sc)
    errors = []
    tau_medians = []
    spec = changepoint_spec_for(sc)
    for rep in range(replicates):
        data_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(0, rep)).generate_state(1)[0]
        )
        ds = simulate_dataset(sc, data_seed)
        fit_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(0, rep, 1)).generate_state(1)[0]
        )
        cfg_rep = SamplerConfig(
            n_chains=cfg.n_chains,
            iterations=cfg.iterations,
            burnin=cfg.burnin,
            thin=cfg.thin,
            seed=fit_seed,
        )
        fit = fit_changepoint(spec, ds, cfg_rep)
        med = rmst_diff(fit.draws, spec, CurveRequest(t_max=sc.t_max)).median
        errors.append(abs(med - truth))
        tau_medians.append(float(np.median(fit.draws.column("tau1"))))
    return float(np.mean(errors)), tau_medians


class TestCriterion05DeskScaleRecovery:
    def test_td_design_err_diff_and_tau_coverage(self):
        start = walltime.perf_counter()
        sc = _td_scenario(t_cens=5.0, n=500)
        cfg = SamplerConfig.simulation()
        err_diff, tau_medians = _fit_td_replicates(sc, replicates=20, seed=701, cfg=cfg)
        in_window = sum(1 for t in tau_medians if 0.7 <= t <= 1.3)
        elapsed = walltime.perf_counter() - start
        report(
            5,
            err_diff <= 0.15 and in_window >= 16 and elapsed < 1800.0,
            f"Err_diff {err_diff:.3f} (limit 0.15), tau in [0.7,1.3] for "
            f"{in_window}/20 replicates, {elapsed / 60:.1f} min",
        )


class TestCriterion06MonotoneSampleSize:
    def test_err_diff_decreases_from_n100_to_n500(self):
        cfg = SamplerConfig.simulation()
        err_100, _ = _fit_td_replicates(_td_scenario(3.0, 100), 20, seed=702, cfg=cfg)
        err_500, _ = _fit_td_replicates(_td_scenario(3.0, 500), 20, seed=703, cfg=cfg)
        report(
            6,
            err_500 < err_100,
            f"Err_diff n=500 {err_500:.3f} < n=100 {err_100:.3f} (t_cens=3 design)",
        )


class TestCriterion07WaicDiscrimination:
    def test_lte_changepoint_beats_plain_weibull(self):
        sc = SimScenario(kind="LTE", shape=1.3, hr=0.25, tau=2.0, n_per_arm=500, t_cens=5.0)
        spec = changepoint_spec_for(sc)
        wins = 0
        gaps = []
        for seed in range(10):
            data_seed = int(
                np.random.SeedSequence(entropy=801, spawn_key=(0, seed)).generate_state(1)[0]
            )
            ds = simulate_dataset(sc, data_seed)
            cfg = SamplerConfig(
                n_chains=2, iterations=8000, burnin=1000, thin=2, seed=seed
            )
            cp_fit = fit_changepoint(spec, ds, cfg)
            wb_fit = fit_comparator(ComparatorSpec(family="weibull"), ds, cfg)
            gaps.append(wb_fit.waic - cp_fit.waic)
            if cp_fit.waic < wb_fit.waic:
                wins += 1
        report(
            7,
            wins >= 8,
            f"change-point model won WAIC in {wins}/10 seeds "
            f"(median gap {float(np.median(gaps)):.1f})",
        )


class TestCriterion08GeneratorFidelity:
    @staticmethod
    def km_sup_distance(sc: SimScenario, seed: int) -> float:
        ds = simulate_dataset(sc, seed)
        sup = 0.0
        for arm in (0, 1):
            recs = [r for r in ds.records if r.covariates["trt"] == arm]
            times = np.array([r.time for r in recs])
            statuses = np.array([r.status for r in recs])
            order = np.argsort(times)
            times, statuses = times[order], statuses[order]
            at_risk = len(times)
            surv = 1.0
            for t in np.unique(times):
                sel = times == t
                deaths = int(statuses[sel].sum())
                if deaths:
                    surv *= 1.0 - deaths / at_risk
                at_risk -= int(sel.sum())
                if t < sc.t_cens:
                    sup = max(sup, abs(surv - true_survival(sc, arm, float(t))))
        return sup

    def test_km_close_to_analytic_truth(self):
        designs = {
            "TD": SimScenario(kind="TD", shape=1.3, hr=0.25, tau=1.0,
                              n_per_arm=5000, t_cens=5.0),
            "LTE": SimScenario(kind="LTE", shape=1.3, hr=0.25, tau=2.0,
                               n_per_arm=5000, t_cens=5.0),
            "CTE": SimScenario(kind="CTE", shape=1.3, hr=0.25, tau=1.0,
                               n_per_arm=5000, t_cens=5.0, omega=1.0),
        }
        sups = {kind: self.km_sup_distance(sc, seed=901) for kind, sc in designs.items()}
        worst = max(sups.values())
        report(
            8,
            worst <= 0.03,
            "KM vs truth sup-distance "
            + ", ".join(f"{k}={v:.4f}" for k, v in sups.items())
            + " (n=5000/arm)",
        )


class TestCriterion09CliDeterminism:
    def test_fit_outputs_byte_identical(self, tmp_path):
        data = REPO / "docs" / "examples" / "td_small.csv"
        outputs = {}
        for label, threads in (("run1", "1"), ("run2", "1"), ("run4", "4")):
            out = tmp_path / label
            code = cli_main(
                ["fit", "--data", str(data), "--preset", "treatment_delay",
                 "--seed", "99", "--threads", threads, "--chains", "2",
                 "--iters", "3000", "--burnin", "500", "--thin", "2",
                 "--out", str(out)]
            )
            assert code == 0
            outputs[label] = tuple(
                (out / name).read_bytes() for name in ("draws.csv", "summary.json", "model.json")
            )
        same = outputs["run1"] == outputs["run2"] == outputs["run4"]
        report(9, same, "draws/summary/model bytes identical across reruns and --threads 1 vs 4")


E1684_ENV = "CPSURV_E1684_CSV"


@pytest.mark.skipif(
    E1684_ENV not in os.environ,
    reason=f"optional: set {E1684_ENV} to the combined trial CSV "
    "(columns time,status,trt,age) to run the real-data ordering check",
)
class TestCriterion10RealDataOrdering:
    def test_waic_ordering_on_supplied_trial_data(self):
        path = os.environ[E1684_ENV]
        ds = load_dataset(
            path,
            ColumnSchema(covariates={"trt": "trt", "age": "age"}),
        )
        ds = standardize_covariate(ds, "age")
        covs = ("Intercept", "trt", "age_scale")
        cfg = SamplerConfig(seed=1)  # applications default: 2 x 55,000
        waics = {}
        for name, family in (("rp_nph", "royston-parmar-nph"), ("rp_ph", "royston-parmar-ph")):
            waics[name] = fit_comparator(
                ComparatorSpec(family=family, covariates=covs), ds, cfg
            ).waic
        for name, preset in (
            ("cte", ScenarioPreset.CONVERGING_HAZARDS),
            ("lte", ScenarioPreset.LOSS_OF_EFFECT),
            ("step", ScenarioPreset.STEP_HR_B),
        ):
            spec = expand_preset(preset, covs, k=1)
            waics[name] = fit_changepoint(spec, ds, cfg).waic
        tol = 4.0
        ordered = (
            waics["rp_nph"] < waics["rp_ph"] + tol
            and waics["rp_ph"] < waics["cte"] + tol
            and waics["cte"] <= waics["lte"] + tol
            and waics["lte"] < waics["step"] + tol
        )
        report(10, ordered, f"WAIC ordering with tolerance {tol}: {waics}")
