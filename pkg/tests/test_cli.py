import json
from pathlib import Path

import numpy as np
import pytest

from cpsurv.cli import main

REPO = Path(__file__).resolve().parent.parent
EXAMPLE5 = REPO / "docs" / "examples" / "example5.csv"
TD_SMALL = REPO / "docs" / "examples" / "td_small.csv"

FAST_SAMPLER = ["--chains", "2", "--iters", "1200", "--burnin", "400", "--thin", "2"]


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def outdir(tmp_path):
    return tmp_path / "out"


class TestFit:
    def test_smoke_on_published_five_rows(self, outdir, capsys):
        code = run(
            ["fit", "--data", EXAMPLE5, "--preset", "loss_of_effect", "--k", "1",
             "--covariates", "trt,age_scale", "--standardize", "age",
             "--seed", "7", "--threads", "1", "--out", outdir, *FAST_SAMPLER]
        )
        assert code == 0
        summary = json.loads((outdir / "summary.json").read_text())
        assert np.isfinite(summary["waic"])
        for entry in summary["parameters"].values():
            assert "rhat" in entry
        assert (outdir / "draws.csv").exists()
        assert (outdir / "model.json").exists()
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert "draws.csv" in manifest["outputs"]
        assert str(EXAMPLE5) in manifest["inputs"]

    def test_seed_determinism_across_threads(self, tmp_path):
        digests = {}
        for label, threads in (("a", "1"), ("b", "4"), ("c", "1")):
            out = tmp_path / label
            code = run(
                ["fit", "--data", TD_SMALL, "--preset", "treatment_delay",
                 "--seed", "11", "--threads", threads, "--out", out, *FAST_SAMPLER]
            )
            assert code == 0
            digests[label] = (
                (out / "draws.csv").read_bytes(),
                (out / "summary.json").read_bytes(),
            )
        assert digests["a"] == digests["b"] == digests["c"]

    def test_missing_trt_column_exit_2(self, tmp_path, capsys):
        data = tmp_path / "nocol.csv"
        data.write_text("time,status\n1.0,1\n2.0,0\n")
        code = run(
            ["fit", "--data", data, "--preset", "loss_of_effect",
             "--seed", "1", "--out", tmp_path / "o", *FAST_SAMPLER]
        )
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert "trt" in err["error"]["message"]

    def test_max_rhat_exit_3(self, outdir, capsys):
        # one unidentifiable fit on 5 rows with a strict limit
        code = run(
            ["fit", "--data", EXAMPLE5, "--preset", "loss_of_effect",
             "--standardize", "age", "--covariates", "trt,age_scale",
             "--seed", "3", "--max-rhat", "1.0", "--out", outdir, *FAST_SAMPLER]
        )
        assert code == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "convergence"
        # outputs still written for inspection
        assert (outdir / "draws.csv").exists()

    def test_model_json_input(self, tmp_path):
        model = REPO / "docs" / "examples" / "lte_model.json"
        out = tmp_path / "o"
        code = run(
            ["fit", "--data", EXAMPLE5, "--model", model, "--standardize", "age",
             "--seed", "5", "--out", out, *FAST_SAMPLER]
        )
        assert code == 0
        spec = json.loads((out / "model.json").read_text())
        assert spec["preset"] == "loss_of_effect"


class TestPredict:
    @pytest.fixture
    def fit_dir(self, tmp_path):
        out = tmp_path / "fit"
        assert run(
            ["fit", "--data", TD_SMALL, "--preset", "treatment_delay",
             "--seed", "13", "--out", out, *FAST_SAMPLER]
        ) == 0
        return out

    def test_outputs(self, fit_dir, tmp_path):
        req = tmp_path / "req.json"
        req.write_text(json.dumps({"t_max": 15.0, "grid_points": 50}))
        out = tmp_path / "pred"
        assert run(["predict", "--fit", fit_dir, "--request", req,
                    "--seed", "0", "--out", out]) == 0
        curves = (out / "curves.csv").read_text().splitlines()
        assert curves[0] == "time,arm,median,lo95,hi95"
        assert len(curves) == 1 + 2 * 50
        dens = (out / "cpdensity.csv").read_text().splitlines()
        assert dens[0] == "time,density"
        rmst_rows = (out / "rmst.csv").read_text().splitlines()
        assert rmst_rows[0] == "quantity,median,lo95,hi95"
        qs = [r.split(",")[0] for r in rmst_rows[1:]]
        assert qs == ["rmst_arm0", "rmst_arm1", "rmst_diff"]
        assert (out / "hrcurve.csv").exists()

    def test_single_point_grid_survival_one(self, fit_dir, tmp_path):
        req = tmp_path / "req.json"
        req.write_text(json.dumps({"t_max": 15.0, "times": [0.0]}))
        out = tmp_path / "pred0"
        assert run(["predict", "--fit", fit_dir, "--request", req,
                    "--seed", "0", "--out", out]) == 0
        lines = (out / "curves.csv").read_text().splitlines()[1:]
        for line in lines:
            _, _, median, lo, hi = line.split(",")
            assert float(median) == 1.0 and float(lo) == 1.0 and float(hi) == 1.0

    def test_missing_fit_artifacts(self, tmp_path, capsys):
        req = tmp_path / "req.json"
        req.write_text(json.dumps({"t_max": 15.0}))
        code = run(["predict", "--fit", tmp_path / "nope", "--request", req,
                    "--seed", "0", "--out", tmp_path / "p"])
        assert code == 2


class TestCompare:
    def test_league_sorted_by_waic(self, tmp_path):
        out = tmp_path / "league"
        code = run(
            ["compare", "--data", TD_SMALL,
             "--models", "weibull,exponential,cp:treatment_delay",
             "--tmax", "15", "--seed", "2", "--threads", "1", "--out", out,
             *FAST_SAMPLER]
        )
        assert code == 0
        lines = (out / "league.csv").read_text().splitlines()
        assert lines[0] == "model,rmst_diff_median,waic"
        waics = [float(line.split(",")[2]) for line in lines[1:]]
        assert waics == sorted(waics)
        assert len(waics) == 3

    def test_single_model(self, tmp_path):
        out = tmp_path / "one"
        code = run(
            ["compare", "--data", TD_SMALL, "--models", "exponential",
             "--seed", "2", "--out", out, *FAST_SAMPLER]
        )
        assert code == 0
        assert len((out / "league.csv").read_text().splitlines()) == 2

    def test_unknown_model_token(self, tmp_path, capsys):
        code = run(
            ["compare", "--data", TD_SMALL, "--models", "frobnicate",
             "--seed", "2", "--out", tmp_path / "x", *FAST_SAMPLER]
        )
        assert code == 2


class TestSimulate:
    def test_datasets_written(self, tmp_path):
        config = tmp_path / "sim.json"
        config.write_text(json.dumps({
            "kind": "TD", "shape": 1.3, "hr": 0.25, "tau": 1.0,
            "n_per_arm": 20, "t_cens": 5.0, "replicates": 3,
        }))
        out = tmp_path / "sims"
        assert run(["simulate", "--config", config, "--seed", "4", "--out", out]) == 0
        files = sorted(p.name for p in out.glob("rep_*.csv"))
        assert files == ["rep_000.csv", "rep_001.csv", "rep_002.csv"]
        body = (out / "rep_000.csv").read_text().splitlines()
        assert body[0] == "time,status,trt"
        assert len(body) == 41

    def test_identical_seeds_identical_bytes(self, tmp_path):
        config = tmp_path / "sim.json"
        config.write_text(json.dumps({
            "kind": "LTE", "shape": 0.75, "hr": 0.5, "tau": 2.0,
            "n_per_arm": 15, "t_cens": 3.0, "replicates": 1,
        }))
        outs = []
        for label in ("a", "b"):
            out = tmp_path / label
            assert run(["simulate", "--config", config, "--seed", "9", "--out", out]) == 0
            outs.append((out / "rep_000.csv").read_bytes())
        assert outs[0] == outs[1]


class TestSimStudy:
    def test_tiny_study(self, tmp_path):
        config = tmp_path / "study.json"
        config.write_text(json.dumps({
            "grid": {"kind": "TD", "shape": 1.3, "hr": 0.25, "tau": 1.0,
                     "n_per_arm": 30, "t_cens": 5.0},
            "models": ["changepoint"],
            "replicates": 2,
            "rhat_limit": 1e9,
            "sampler": {"chains": 2, "iterations": 700, "burnin": 250, "thin": 1},
        }))
        out = tmp_path / "study"
        assert run(["sim-study", "--config", config, "--seed", "6",
                    "--threads", "1", "--out", out]) == 0
        study = (out / "study.csv").read_text().splitlines()
        assert study[0].startswith("kind,n_samp,t_cens,HR,shape")
        assert "changepoint" in study[0]
        assert (out / "params.csv").exists()
        assert (out / "failures.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["outputs"]) >= {"study.csv", "params.csv", "failures.csv"}


class TestPredictCteConvergence:
    def test_hr_curve_approaches_one_beyond_waning(self, tmp_path):
        from cpsurv.simstudy import SimScenario, simulate_dataset

        sc = SimScenario(kind="CTE", shape=1.3, hr=0.25, tau=1.0, n_per_arm=80,
                         t_cens=5.0, omega=1.0)
        ds = simulate_dataset(sc, rep_seed=31)
        data = tmp_path / "cte.csv"
        with open(data, "w") as fh:
            fh.write("time,status,trt\n")
            for rec in ds.records:
                fh.write(f"{rec.time!r},{rec.status},{rec.covariates['trt']:g}\n")
        fit_dir = tmp_path / "fit"
        assert run(
            ["fit", "--data", data, "--preset", "converging_hazards",
             "--seed", "17", "--out", fit_dir,
             "--chains", "2", "--iters", "2500", "--burnin", "800", "--thin", "2"]
        ) == 0
        # evaluate the HR curve far enough past the waning onset: tau + 5/omega
        req = tmp_path / "req.json"
        req.write_text(json.dumps({"t_max": 12.0, "grid_points": 120}))
        out = tmp_path / "pred"
        assert run(["predict", "--fit", fit_dir, "--request", req,
                    "--seed", "0", "--out", out]) == 0
        lines = (out / "hrcurve.csv").read_text().splitlines()[1:]
        times = np.array([float(l.split(",")[0]) for l in lines])
        medians = np.array([float(l.split(",")[1]) for l in lines])
        summary = json.loads((fit_dir / "summary.json").read_text())
        tau_med = summary["parameters"]["tau1"]["median"]
        omega_med = summary["parameters"]["omega"]["median"]
        horizon = tau_med + 5.0 / omega_med
        beyond = medians[times >= horizon]
        assert beyond.size > 0
        assert abs(beyond[-1] - 1.0) < 0.05
