"""``msmw`` command line: fit, predict, simulate, cv.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else. A failed run leaves its ``manifest.json`` with
``status: incomplete`` and the error message.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import validate
from .cv import Variant, compare_variants, table11_variants, write_variant_table
from .errors import (
    ConditioningError,
    ConfigError,
    DataLoadError,
    ShapeError,
    UndefinedMetricError,
    ValidationError,
)
from .gibbs import PosteriorDraws, run_chain
from .predict import FittedModel, normal_cdf, posterior_predictive, predict_point
from .simulation import run_grid, scenario_grid

log = logging.getLogger("msmw")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _rank(text: str):
    if text == "full":
        return "full"
    try:
        r = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("rank must be a positive integer or 'full'") from None
    if r < 1:
        raise argparse.ArgumentTypeError("rank must be a positive integer or 'full'")
    return r


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file, or a previous run's manifest.json")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--iterations", type=int)
    common.add_argument("--burn-in", type=int)
    common.add_argument("--rank", type=_rank, help="1, 2, ... or full")
    common.add_argument("--source-mode", choices=["multi", "single"])
    common.add_argument("--family", choices=["continuous", "binary"])
    common.add_argument("--engine", choices=["auto", "numpy", "numba"])
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--predictors", help="long-format predictors CSV")
    data.add_argument("--outcomes", help="outcomes CSV")
    data.add_argument("--standardize", action="store_true", default=None)

    p = argparse.ArgumentParser(prog="msmw", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common, data], help="run the Gibbs sampler and write summaries")
    pr = sub.add_parser("predict", parents=[common], help="score new data with a fitted model")
    pr.add_argument("--model", help="output directory of a previous fit")
    pr.add_argument("--predictors", help="long-format predictors CSV for the new units")
    pr.add_argument("--predictive-draws", action="store_true", default=None)
    sm = sub.add_parser("simulate", parents=[common], help="run a simulation grid")
    sm.add_argument("--regime", choices=["continuous", "probit", "separate-normal"])
    sm.add_argument("--dims", choices=["low", "high"])
    sm.add_argument("--replications", type=int)
    sm.add_argument("--workers", type=int)
    cv = sub.add_parser("cv", parents=[common, data], help="leave-one-out comparison of model variants")
    cv.add_argument("--variants", choices=["table", "model"])
    return p


def resolve_config(args) -> io.RunConfig:
    cfg = io.load_config(args.config)
    overrides = {
        "seed": args.seed,
        "chain.iterations": args.iterations,
        "chain.burn_in": args.burn_in,
        "model.rank": args.rank,
        "model.source_mode": args.source_mode,
        "data.family": args.family,
        "engine": args.engine,
        "out": args.out,
    }
    if args.command in ("fit", "cv"):
        overrides.update({
            "data.predictors": args.predictors,
            "data.outcomes": args.outcomes,
            "data.standardize": args.standardize,
        })
    if args.command == "predict":
        overrides.update({
            "predict.model_dir": args.model,
            "predict.predictors": args.predictors,
            "predict.predictive_draws": args.predictive_draws,
        })
    if args.command == "simulate":
        overrides.update({
            "simulate.regime": args.regime,
            "simulate.dims": args.dims,
            "simulate.replications": args.replications,
            "simulate.workers": args.workers,
        })
    if args.command == "cv":
        overrides["cv.variants"] = args.variants
    return cfg.with_overrides(**overrides)


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"{name} is required (config file or flag)")
    return value


def _load(cfg: io.RunConfig) -> io.Dataset:
    d = cfg["data"]
    return io.load_dataset(
        _require(d["predictors"], "data.predictors"),
        _require(d["outcomes"], "data.outcomes"),
        d["family"],
        standardize_features=d["standardize"],
    )


def _write_standardization(out: Path, st: io.Standardization, axes: io.Axes, manifest):
    io.write_coefficients(out / "standardization_mean.csv", st.mean, axes)
    io.write_coefficients(out / "standardization_scale.csv", st.scale, axes)
    manifest.add_output(out / "standardization_mean.csv", out / "standardization_scale.csv")


def cmd_fit(cfg: io.RunConfig, out: Path, manifest: io.Manifest):
    ds = _load(cfg)
    spec = validate(cfg.model_spec(ds.X.partition, ds.X.D), ds.X, ds.y)
    draws = run_chain(ds.X, ds.y, spec, engine=cfg["engine"])
    fitted = FittedModel.from_draws(draws, spec.family)
    io.write_coefficients(out / "B_hat.csv", fitted.B_hat, ds.axes)
    names = io.tau_names(draws, ds.axes)
    io.write_matrix(out / "tau_summary.csv", io.SUMMARY_HEADER,
                    [[n, *io.draw_summary(draws.tau[:, m])] for m, n in enumerate(names)])
    io.write_matrix(out / "sigma2_summary.csv", io.SUMMARY_HEADER, [["sigma2", *io.draw_summary(draws.sigma2)]])
    io.write_draw_archive(out / "draws", draws, ds.axes)
    model = {"family": spec.family, "spec": spec.to_dict(), "axes": ds.axes.to_dict(),
             "standardized": ds.standardization is not None}
    with open(out / "model.json", "w", encoding="utf-8") as fh:
        json.dump(model, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if ds.standardization is not None:
        _write_standardization(out, ds.standardization, ds.axes, manifest)
    manifest.add_output(out / "B_hat.csv", out / "tau_summary.csv", out / "sigma2_summary.csv",
                        out / "draws", out / "model.json")
    return {"spec_fingerprint": spec.fingerprint(), "kept_draws": len(draws)}


def cmd_predict(cfg: io.RunConfig, out: Path, manifest: io.Manifest):
    p = cfg["predict"]
    model_dir = Path(_require(p["model_dir"], "predict.model_dir"))
    try:
        with open(model_dir / "model.json", encoding="utf-8") as fh:
            model = json.load(fh)
    except OSError as exc:
        raise DataLoadError(f"{model_dir}: no fitted model ({exc.strerror})") from exc
    ds = io.load_dataset(_require(p["predictors"], "predict.predictors"))
    a = model["axes"]
    fit_axes = io.Axes((), tuple(a["sources"]), tuple(tuple(f) for f in a["features"]), tuple(a["ways"]))
    if not ds.axes.same_features(fit_axes):
        raise DataLoadError("new predictors do not have the fitted sources, features and ways")
    values = ds.X.values
    if model["standardized"]:
        st = io.Standardization(io.read_coefficients(model_dir / "standardization_mean.csv"),
                                io.read_coefficients(model_dir / "standardization_scale.csv"))
        values = st.apply(values)
    P, D = values.shape[1:]
    B, tau, s2 = io.read_draw_archive(model_dir / "draws", P, D)
    draws = PosteriorDraws(B, tau, s2, fit_axes.partition)
    fitted = FittedModel.from_draws(draws, model["family"])
    scores = predict_point(fitted, values)
    probs = normal_cdf(scores)
    rows = []
    for sid, s, prob in zip(ds.axes.sample_ids, scores, probs):
        row = [sid, float(s)]
        if fitted.family == "binary":
            row += [float(prob), int(s >= 0)]
        rows.append(row)
    header = ["sample_id", "score"] + (["probability", "class"] if fitted.family == "binary" else [])
    io.write_matrix(out / "predictions.csv", header, rows)
    manifest.add_output(out / "predictions.csv")
    if p["predictive_draws"]:
        draws_pp = posterior_predictive(fitted, values, np.random.default_rng(cfg.seed))
        if fitted.family == "binary":
            draws_pp = draws_pp.astype(int)
        io.write_matrix(out / "predictive_draws.csv", list(ds.axes.sample_ids), draws_pp.tolist())
        manifest.add_output(out / "predictive_draws.csv")
    return {}


def cmd_simulate(cfg: io.RunConfig, out: Path, manifest: io.Manifest):
    s = cfg["simulate"]
    scenarios = scenario_grid(s["regime"], cfg.simulation_dims(), replications=s["replications"],
                              n_test=s["n_test"])
    report = run_grid(scenarios, s["models"], root_seed=cfg.seed, chain=cfg.chain,
                      workers=s["workers"], engine=cfg["engine"])
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    manifest.add_output(out / "report.csv", out / "report.json")
    headline = "misclassification" if scenarios[0].family == "binary" else "rse"
    for metric in (headline, "correlation", "coverage"):
        path = out / f"table_{metric}.txt"
        path.write_text(report.format_table(metric) + "\n", encoding="utf-8")
        manifest.add_output(path)
    return {"failures": len(report.failures)}


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


def cmd_cv(cfg: io.RunConfig, out: Path, manifest: io.Manifest):
    if cfg.family != "binary":
        raise ConfigError("cv compares probit models; set data.family: binary")
    ds = _load(cfg)
    if cfg["cv"]["variants"] == "table":
        variants = table11_variants(ds.X, io._prior(cfg["cv"]["tau_prior"], "cv.tau_prior"), cfg.chain)
    else:
        spec = validate(cfg.model_spec(ds.X.partition, ds.X.D), ds.X, ds.y)
        variants = [Variant("configured model", spec)]
    for v in variants:
        validate(v.spec, ds.X if v.sources is None else ds.X.select_sources(v.sources), ds.y)
    results = compare_variants(ds.X, ds.y, variants, seed=cfg.seed, engine=cfg["engine"])
    (out / "loocv").mkdir(exist_ok=True)
    for r in results:
        path = out / "loocv" / f"{_slug(r.variant.label)}.csv"
        r.result.to_csv(path, ds.axes.sample_ids)
        manifest.add_output(path)
    write_variant_table(results, out / "variants.csv", out / "variants.json")
    manifest.add_output(out / "variants.csv", out / "variants.json")
    return {"degenerate_folds": sorted({f for r in results for f in r.result.degenerate})}


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "cv": cmd_cv}


def _inputs(cfg: io.RunConfig, command: str):
    if command in ("fit", "cv"):
        return [cfg["data"]["predictors"], cfg["data"]["outcomes"]]
    if command == "predict":
        return [cfg["predict"]["predictors"]]
    return []


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataLoadError, ShapeError)):
        return EXIT_DATA
    if isinstance(exc, (ConditioningError, UndefinedMetricError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_OTHER


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = None
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        try:
            inputs = _inputs(cfg, args.command)
            manifest = io.Manifest(out, args.command, cfg, inputs=[p for p in inputs if p and Path(p).exists()])
        except OSError as exc:
            raise DataLoadError(str(exc)) from exc
        extra = COMMANDS[args.command](cfg, out, manifest)
        manifest.finish("complete", **(extra or {}))
    except Exception as exc:
        code = exit_code(exc)
        if code == EXIT_OTHER:
            log.exception("unexpected failure")
        print(f"msmw {args.command}: error: {exc}", file=sys.stderr)
        if manifest is not None:
            manifest.finish("incomplete", error=f"{type(exc).__name__}: {exc}")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
