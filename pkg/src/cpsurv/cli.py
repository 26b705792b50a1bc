"""Command-line front end: fit, predict, compare, simulate, sim-study.

Exit codes: 0 success, 2 validation/schema error, 3 convergence failure
(only when --max-rhat is given and exceeded), 4 numerical error. Errors are
emitted as one JSON object on stderr so pipelines can parse them. Every run
writes a manifest.json recording config, seed, input digests and output
digests; identical config and seed reproduce byte-identical outputs.
"""

import argparse
import datetime
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .comparators import (
    FAMILIES,
    ComparatorSpec,
    comparator_rmst_diff,
    fit_comparator,
)
from .data import ColumnSchema, load_dataset, standardize_covariate
from .errors import (
    ConvergenceError,
    CpsurvError,
    EvaluationError,
    SchemaError,
    ValidationError,
)
from .mcmc import (
    FitResult,
    PosteriorDraws,
    SamplerConfig,
    export_draws_csv,
    fit_changepoint,
    summary_dict,
)
from .predict import CurveRequest, hr_curve, rmst, rmst_diff, survival_curve
from .scenarios import ModelSpec, ScenarioPreset, expand_preset
from .simstudy import SimScenario, run_study, simulate_dataset

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_NUMERICAL = 4


def _fmt(x) -> str:
    return repr(float(x))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


class RunContext:
    """Collects manifest fields while a command runs."""

    def __init__(self, command: str, out_dir: Path, config: dict, seed: int):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.started_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def record_input(self, path) -> None:
        path = Path(path)
        self.inputs[str(path)] = _sha256(path)

    def open_output(self, name: str):
        if Path(name).name != name:
            raise ValidationError(f"output name {name!r} escapes the output directory")
        self.outputs.append(name)
        return open(self.out_dir / name, "w", newline="")

    def write_manifest(self) -> None:
        config_json = json.dumps(self.config, sort_keys=True)
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "config": self.config,
            "config_sha256": hashlib.sha256(config_json.encode()).hexdigest(),
            "started_at": self.started_at,
            "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "inputs": self.inputs,
            "outputs": {
                name: _sha256(self.out_dir / name) for name in sorted(self.outputs)
            },
        }
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(np.random.SeedSequence().generate_state(1)[0])


def _sampler_config(args, seed: int) -> SamplerConfig:
    return SamplerConfig(
        n_chains=args.chains,
        iterations=args.iters,
        burnin=args.burnin,
        thin=args.thin,
        seed=seed,
        threads=args.threads,
        tau_max=args.tau_max,
    )


def _load_model_spec(args) -> ModelSpec:
    if args.model:
        with open(args.model) as fh:
            return ModelSpec.from_json_dict(json.load(fh))
    if args.preset:
        try:
            preset = ScenarioPreset(args.preset.lower())
        except ValueError:
            names = ", ".join(p.value for p in ScenarioPreset)
            raise ValidationError(f"unknown preset {args.preset!r}; expected one of {names}")
        covariates = ["Intercept"] + [c for c in (args.covariates or "trt").split(",") if c]
        return expand_preset(preset, covariates, k=args.k, family=args.family)
    raise ValidationError("either --model or --preset is required")


def _load_data(args, spec_covariates) -> "Dataset":
    names = [c for c in spec_covariates if c != "Intercept"]
    standardize = [c for c in (args.standardize or "").split(",") if c]
    columns = {}
    for name in names:
        source = name
        if name.endswith("_scale") and name[: -len("_scale")] in standardize:
            continue  # derived below
        columns[name] = source
    schema = ColumnSchema(
        time=args.time_col,
        status=args.status_col,
        covariates=columns,
        id=args.id_col,
    )
    for raw in standardize:
        if raw not in schema.covariates:
            columns[raw] = raw
    ds = load_dataset(args.data, ColumnSchema(args.time_col, args.status_col, columns, args.id_col))
    for raw in standardize:
        ds = standardize_covariate(ds, raw)
    missing = [n for n in names if n not in ds.covariate_names]
    if missing:
        raise SchemaError(f"{args.data}: missing required covariate columns {missing}")
    return ds


def _write_fit_outputs(ctx: RunContext, fit: FitResult, scaling) -> dict:
    with ctx.open_output("draws.csv") as fh:
        export_draws_csv(fit.draws, fh)
    summary = summary_dict(fit)
    summary["metadata"]["scaling"] = {k: list(v) for k, v in scaling.items()}
    summary["metadata"]["sampler"] = {
        "n_chains": fit.draws.config.n_chains,
        "iterations": fit.draws.config.iterations,
        "burnin": fit.draws.config.burnin,
        "thin": fit.draws.config.thin,
        "seed": fit.draws.config.seed,
    }
    with ctx.open_output("summary.json") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if isinstance(fit.spec, ModelSpec):
        with ctx.open_output("model.json") as fh:
            json.dump(fit.spec.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


def cmd_fit(args) -> int:
    seed = _resolve_seed(args)
    spec = _load_model_spec(args)
    ds = _load_data(args, spec.covariates)
    cfg = _sampler_config(args, seed)
    ctx = RunContext("fit", Path(args.out), _public_config(args), seed)
    ctx.record_input(args.data)
    if args.model:
        ctx.record_input(args.model)
    fit = fit_changepoint(spec, ds, cfg)
    _write_fit_outputs(ctx, fit, ds.scaling)
    ctx.write_manifest()
    max_rhat = fit.diagnostics.max_rhat()
    if args.max_rhat is not None and max_rhat is not None and max_rhat > args.max_rhat:
        raise ConvergenceError(
            f"max split R-hat {max_rhat:.4f} exceeds --max-rhat {args.max_rhat}"
        )
    return EXIT_OK


def _load_fit_dir(fit_dir: Path):
    summary_path = fit_dir / "summary.json"
    model_path = fit_dir / "model.json"
    draws_path = fit_dir / "draws.csv"
    for p in (summary_path, model_path, draws_path):
        if not p.exists():
            raise ValidationError(f"fit directory is missing {p.name}")
    with open(model_path) as fh:
        spec = ModelSpec.from_json_dict(json.load(fh))
    with open(summary_path) as fh:
        summary = json.load(fh)
    raw = np.genfromtxt(draws_path, delimiter=",", names=True)
    names = list(raw.dtype.names)
    chain = raw["chain"].astype(np.int32)
    draw = raw["draw"].astype(np.int32)
    param_names = tuple(n for n in names if n not in ("draw", "chain"))
    params = np.column_stack([raw[n] for n in param_names])
    n_chains = int(chain.max()) + 1
    per_chain = params.shape[0] // n_chains
    cfg = SamplerConfig(
        n_chains=n_chains,
        iterations=per_chain,
        burnin=0,
        thin=1,
        seed=int(summary["metadata"]["sampler"]["seed"]),
    )
    draws = PosteriorDraws(
        params=params,
        chain=chain,
        draw=draw,
        param_names=param_names,
        loglik=np.zeros((params.shape[0], 1)),
        acceptance={},
        warnings=(),
        config=cfg,
        tau_max=float(summary["tau_max"]),
    )
    scaling = {
        k: tuple(v) for k, v in summary["metadata"].get("scaling", {}).items()
    }
    return spec, draws, scaling


def _draws_param_names_match(spec: ModelSpec, draws: PosteriorDraws) -> None:
    from .likelihood import ParamLayout

    expected = ParamLayout(spec).names
    cleaned = tuple(n.replace(".", "") for n in expected)
    got = tuple(n.replace(".", "") for n in draws.param_names)
    if cleaned != got:
        raise ValidationError(
            f"draws parameters {draws.param_names} do not match the model layout {expected}"
        )


def cmd_predict(args) -> int:
    fit_dir = Path(args.fit)
    spec, draws, scaling = _load_fit_dir(fit_dir)
    _draws_param_names_match(spec, draws)
    with open(args.request) as fh:
        req_json = json.load(fh)
    req = CurveRequest(
        t_max=float(req_json.get("t_max", draws.tau_max)),
        profile=req_json.get("profile", {}),
        arms=tuple(req_json.get("arms", (0.0, 1.0))),
        times=req_json.get("times"),
        grid_points=int(req_json.get("grid_points", 200)),
    )
    seed = _resolve_seed(args)
    ctx = RunContext("predict", Path(args.out), _public_config(args), seed)
    ctx.record_input(args.request)
    for name in ("draws.csv", "summary.json", "model.json"):
        ctx.record_input(fit_dir / name)

    surv = survival_curve(draws, spec, req, scaling)
    with ctx.open_output("curves.csv") as fh:
        fh.write("time,arm,median,lo95,hi95\n")
        for arm, band in surv.bands.items():
            for i, t in enumerate(surv.times):
                fh.write(
                    f"{_fmt(t)},{arm:g},{_fmt(band.median[i])},"
                    f"{_fmt(band.lo95[i])},{_fmt(band.hi95[i])}\n"
                )
    for j, (name, dens) in enumerate(sorted(surv.cp_density.items())):
        fname = "cpdensity.csv" if j == 0 else f"cpdensity{j + 1}.csv"
        with ctx.open_output(fname) as fh:
            fh.write("time,density\n")
            for t, d in zip(surv.times, dens):
                fh.write(f"{_fmt(t)},{_fmt(d)}\n")

    if spec.trt_index is not None:
        hr = hr_curve(draws, spec, req, scaling)
        band = hr.bands["hr"]
        with ctx.open_output("hrcurve.csv") as fh:
            fh.write("time,median,lo95,hi95\n")
            for i, t in enumerate(hr.times):
                fh.write(
                    f"{_fmt(t)},{_fmt(band.median[i])},"
                    f"{_fmt(band.lo95[i])},{_fmt(band.hi95[i])}\n"
                )

    with ctx.open_output("rmst.csv") as fh:
        fh.write("quantity,median,lo95,hi95\n")
        for arm in req.arms:
            r = rmst(draws, spec, req, arm, scaling)
            fh.write(f"rmst_arm{arm:g},{_fmt(r.median)},{_fmt(r.lo95)},{_fmt(r.hi95)}\n")
        d = rmst_diff(draws, spec, req, scaling)
        fh.write(f"rmst_diff,{_fmt(d.median)},{_fmt(d.lo95)},{_fmt(d.hi95)}\n")
    ctx.write_manifest()
    return EXIT_OK


def _parse_model_token(token: str, args):
    token = token.strip()
    if token.startswith("cp:"):
        parts = token.split(":")
        preset = ScenarioPreset(parts[1].lower())
        k = int(parts[2][1:]) if len(parts) > 2 else 1
        covariates = ["Intercept"] + [c for c in (args.covariates or "trt").split(",") if c]
        return token, expand_preset(preset, covariates, k=k, family=args.family)
    if token.startswith("file:"):
        with open(token[len("file:"):]) as fh:
            return token, ModelSpec.from_json_dict(json.load(fh))
    if token in FAMILIES:
        covs = tuple(["Intercept"] + [c for c in (args.covariates or "trt").split(",") if c])
        return token, ComparatorSpec(family=token, covariates=covs)
    raise ValidationError(
        f"unknown model token {token!r}: use a family name ({', '.join(FAMILIES)}), "
        "cp:<preset>[:k<k>], or file:<model.json>"
    )


def cmd_compare(args) -> int:
    seed = _resolve_seed(args)
    tokens = [t for t in args.models.split(",") if t]
    if not tokens:
        raise ValidationError("--models must list at least one model")
    parsed = [_parse_model_token(t, args) for t in tokens]
    all_covs = set()
    for _, spec in parsed:
        all_covs.update(c for c in spec.covariates if c != "Intercept")
    ds = _load_data(args, sorted(all_covs))
    ctx = RunContext("compare", Path(args.out), _public_config(args), seed)
    ctx.record_input(args.data)

    rows = []
    for i, (token, spec) in enumerate(parsed):
        cfg = replace(
            _sampler_config(args, seed),
            seed=int(np.random.SeedSequence(entropy=seed, spawn_key=(i,)).generate_state(1)[0]),
        )
        if isinstance(spec, ModelSpec):
            fit = fit_changepoint(spec, ds, cfg)
            req = CurveRequest(t_max=args.tmax)
            diff_median = float(rmst_diff(fit.draws, spec, req, ds.scaling).median)
        else:
            fit = fit_comparator(spec, ds, cfg)
            diff_median = float(np.median(comparator_rmst_diff(fit, args.tmax)))
        rows.append((token, diff_median, fit.waic))
    rows.sort(key=lambda r: r[2])
    with ctx.open_output("league.csv") as fh:
        fh.write("model,rmst_diff_median,waic\n")
        for token, diff_median, waic in rows:
            fh.write(f"{token},{diff_median:.6g},{waic:.6g}\n")
    ctx.write_manifest()
    return EXIT_OK


def _scenario_from_json(d: dict) -> SimScenario:
    try:
        return SimScenario(
            kind=d["kind"],
            shape=float(d["shape"]),
            hr=float(d["hr"]),
            tau=float(d["tau"]),
            n_per_arm=int(d["n_per_arm"]),
            t_cens=float(d["t_cens"]),
            scale=float(d.get("scale", 0.3)),
            omega=float(d.get("omega", 1.0)),
            t_max=float(d.get("t_max", 15.0)),
        )
    except KeyError as exc:
        raise ValidationError(f"scenario config is missing field {exc}") from None


def cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    with open(args.config) as fh:
        config = json.load(fh)
    sc = _scenario_from_json(config)
    replicates = int(config.get("replicates", 1))
    ctx = RunContext("simulate", Path(args.out), _public_config(args), seed)
    ctx.record_input(args.config)
    for rep in range(replicates):
        rep_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(0, rep)).generate_state(1)[0]
        )
        ds = simulate_dataset(sc, rep_seed)
        with ctx.open_output(f"rep_{rep:03d}.csv") as fh:
            fh.write("time,status,trt\n")
            for rec in ds.records:
                fh.write(f"{rec.time!r},{rec.status},{rec.covariates['trt']:g}\n")
    ctx.write_manifest()
    return EXIT_OK


def cmd_sim_study(args) -> int:
    seed = _resolve_seed(args)
    with open(args.config) as fh:
        config = json.load(fh)
    grid = config.get("grid")
    if grid:
        keys = ("kind", "shape", "hr", "tau", "n_per_arm", "t_cens")
        pools = []
        for key in keys:
            value = grid.get(key)
            if value is None:
                raise ValidationError(f"grid config is missing field {key!r}")
            pools.append(value if isinstance(value, list) else [value])
        fixed = {
            "scale": grid.get("scale", 0.3),
            "omega": grid.get("omega", 1.0),
            "t_max": grid.get("t_max", 15.0),
        }
        import itertools

        scenarios = [
            _scenario_from_json({**dict(zip(keys, combo)), **fixed})
            for combo in itertools.product(*pools)
        ]
    else:
        scenarios = [_scenario_from_json(d) for d in config.get("scenarios", [])]
    if not scenarios:
        raise ValidationError("config must provide 'grid' or a 'scenarios' list")
    models = config.get("models", ["changepoint"])
    replicates = int(config.get("replicates", 20))
    sampler = config.get("sampler", {})
    cfg = SamplerConfig.simulation(
        seed=0,
        n_chains=int(sampler.get("chains", 2)),
        iterations=int(sampler.get("iterations", 20_000)),
        burnin=int(sampler.get("burnin", 2_000)),
        thin=int(sampler.get("thin", 4)),
    )
    ctx = RunContext("sim-study", Path(args.out), _public_config(args), seed)
    ctx.record_input(args.config)
    result = run_study(
        scenarios,
        models,
        cfg=cfg,
        replicates=replicates,
        seed=seed,
        threads=args.threads,
        rhat_limit=float(config.get("rhat_limit", 1.1)),
    )
    with ctx.open_output("study.csv") as fh:
        result.to_csv(fh)
    with ctx.open_output("params.csv") as fh:
        result.params_to_csv(fh)
    with ctx.open_output("failures.csv") as fh:
        fh.write("kind,n_samp,t_cens,HR,shape,model,failed,of\n")
        for f in result.failures:
            fh.write(
                f"{f['kind']},{f['n_samp']},{f['t_cens']},{f['HR']},{f['shape']},"
                f"{f['model']},{f['failed']},{f['of']}\n"
            )
    ctx.write_manifest()
    return EXIT_OK


def _public_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpsurv",
        description="Bayesian change-point survival models for treatment-effect scenarios",
    )
    parser.add_argument("--version", action="version", version=f"cpsurv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed; drawn and recorded in the manifest when omitted")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out", required=True, help="output directory")

    def add_sampler(p):
        p.add_argument("--chains", type=int, default=2)
        p.add_argument("--iters", type=int, default=55_000)
        p.add_argument("--burnin", type=int, default=5_000)
        p.add_argument("--thin", type=int, default=5)
        p.add_argument("--tau-max", type=float, default=None, dest="tau_max",
                       help="change-point prior upper bound (default: max observed time)")

    def add_data(p):
        p.add_argument("--data", required=True, help="CSV with survival data")
        p.add_argument("--time-col", default="time", dest="time_col")
        p.add_argument("--status-col", default="status", dest="status_col")
        p.add_argument("--id-col", default=None, dest="id_col")
        p.add_argument("--standardize", default=None,
                       help="comma-separated covariates to standardize into <name>_scale")

    p_fit = sub.add_parser("fit", help="fit a change-point model")
    add_data(p_fit)
    p_fit.add_argument("--model", default=None, help="model spec JSON file")
    p_fit.add_argument("--preset", default=None,
                       help="scenario preset name (alternative to --model)")
    p_fit.add_argument("--k", type=int, default=1, help="number of change-points")
    p_fit.add_argument("--family", default="weibull", choices=("weibull", "exponential"))
    p_fit.add_argument("--covariates", default=None,
                       help="comma-separated covariate names (presets; default 'trt')")
    p_fit.add_argument("--max-rhat", type=float, default=None, dest="max_rhat",
                       help="exit 3 if any split R-hat exceeds this limit")
    add_sampler(p_fit)
    add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="curves and RMST from a fit directory")
    p_pred.add_argument("--fit", required=True, help="directory produced by cpsurv fit")
    p_pred.add_argument("--request", required=True, help="curve request JSON")
    add_common(p_pred)
    p_pred.set_defaults(func=cmd_predict)

    p_cmp = sub.add_parser("compare", help="fit several models, write a WAIC league table")
    add_data(p_cmp)
    p_cmp.add_argument("--models", required=True,
                       help="comma-separated: family names, cp:<preset>[:k<k>], file:<json>")
    p_cmp.add_argument("--covariates", default=None)
    p_cmp.add_argument("--family", default="weibull", choices=("weibull", "exponential"))
    p_cmp.add_argument("--tmax", type=float, default=15.0)
    add_sampler(p_cmp)
    add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_sim = sub.add_parser("simulate", help="draw datasets from a scenario config")
    p_sim.add_argument("--config", required=True)
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_study = sub.add_parser("sim-study", help="run the extrapolation-error study")
    p_study.add_argument("--config", required=True)
    add_common(p_study)
    p_study.set_defaults(func=cmd_sim_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValidationError) as exc:
        _emit_error("validation", exc)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        _emit_error("convergence", exc)
        return EXIT_CONVERGENCE
    except (EvaluationError, FloatingPointError) as exc:
        _emit_error("numerical", exc)
        return EXIT_NUMERICAL
    except CpsurvError as exc:  # pragma: no cover - catch-all for subclasses
        _emit_error("error", exc)
        return EXIT_NUMERICAL


def _emit_error(kind: str, exc: Exception) -> None:
    print(json.dumps({"error": {"type": kind, "message": str(exc)}}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
