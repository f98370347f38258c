"""End-to-end runs: data, covariates, fit, trim-refit, diagnostics, forecasts,
baselines and the comparison report, with their file outputs."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import baselines, diagnostics, plots
from .config import RunConfig
from .covariates import CovariateSet, attach_covariates, compute_covariates
from .evaluation import compare, model_rows, split
from .forecasting import ForecastPanel, forecast_asdr
from .gam import FittedModel, fit_gam, multi_population_spec, single_population_spec, trim_mask, trim_refit
from .ingest import MortalityPanel, default_data_dir, load_panel

log = logging.getLogger("gammort")


@dataclass
class Prepared:
    """A panel split at the cutoff, with covariates from the training years."""

    name: str
    panel: MortalityPanel
    train: MortalityPanel
    test: MortalityPanel | None
    covariates: CovariateSet
    frame: pd.DataFrame


@dataclass
class RunResult:
    name: str
    model: FittedModel
    untrimmed: FittedModel
    diagnostics: diagnostics.DiagnosticsReport
    forecast: ForecastPanel
    gamm_fitted: pd.DataFrame
    baseline_name: str | None = None
    baseline_fitted: pd.DataFrame | None = None
    baseline_forecast: pd.DataFrame | None = None
    timings: dict = field(default_factory=dict)


def load_data(cfg: RunConfig) -> MortalityPanel:
    data_dir = cfg.data_dir or default_data_dir()
    if data_dir is None:
        raise FileNotFoundError("no data directory: set data_dir in the config or GAMMORT_HMD_DIR")
    return load_panel(data_dir, cfg.countries, cfg.year_range, (0, cfg.omega), cfg.genders)


def prepare(cfg: RunConfig, panel: MortalityPanel, name: str = "all") -> Prepared:
    if cfg.cutoff < panel.year_range[1]:
        train, test = split(panel, cfg.cutoff)
    else:
        train, test = panel, None
    cov = compute_covariates(train, cfg.split_age)
    return Prepared(name, panel, train, test, cov, attach_covariates(train, cov))


def populations(cfg: RunConfig, panel: MortalityPanel) -> list[Prepared]:
    """One prepared unit for multi mode, one per (country, gender) in single mode."""
    if cfg.mode == "multi":
        return [prepare(cfg, panel)]
    out = []
    for c in panel.countries:
        for g in panel.genders:
            out.append(prepare(cfg, panel.population(c, g), f"{c}_{g}"))
    return out


def model_spec(cfg: RunConfig):
    if cfg.mode == "multi":
        return multi_population_spec(cfg.k, cfg.k_fs, cfg.eps)
    return single_population_spec(cfg.k_fs)


def fitted_table(model: FittedModel, frame: pd.DataFrame) -> pd.DataFrame:
    eta = model.predict(frame)
    out = frame[["country", "gender", "age", "year"]].reset_index(drop=True)
    out["log_rate_hat"] = eta
    out["rate_hat"] = np.exp(eta)
    return out


def run_baseline(cfg: RunConfig, prep: Prepared):
    """Li-Lee when every gender has at least two countries, Lee-Carter otherwise."""
    train = prep.train
    if cfg.mode == "multi" and len(train.countries) >= 2:
        fitted, fc = baselines.li_lee_panel(train, cfg.horizon)
        return "LL", fitted, fc
    fitted, fc = baselines.lee_carter_panel(train, cfg.horizon)
    return "LC", fitted, fc


def fit_unit(cfg: RunConfig, prep: Prepared):
    """Fit, trim-refit and diagnose one unit.

    Returns ``(model, untrimmed, diagnostics, timings)`` where ``model`` is the
    refit when ``cfg.use_trimmed`` is set.
    """
    timings = {}
    t0 = time.perf_counter()
    untrimmed = fit_gam(prep.frame, model_spec(cfg), max_iter=cfg.max_iter)
    timings["fit"] = time.perf_counter() - t0
    log.info("%s: fitted %d rows, %d coefficients, %d smoothing parameters in %.1fs",
             prep.name, untrimmed.n, untrimmed.beta.size, untrimmed.rho.size, timings["fit"])
    t0 = time.perf_counter()
    refit = trim_refit(untrimmed, prep.frame, cfg.threshold, max_iter=cfg.max_iter)
    timings["trim_refit"] = time.perf_counter() - t0
    log.info("%s: trim at %.3g retained %.2f%%", prep.name, cfg.threshold, 100 * refit.retained_fraction)
    if cfg.use_trimmed:
        model, frame = refit, prep.frame.loc[trim_mask(untrimmed, prep.frame, cfg.threshold)]
    else:
        model, frame = untrimmed, prep.frame
    return model, untrimmed, diagnostics.diagnose(model, frame, cfg.max_lag), timings


def run_unit(cfg: RunConfig, prep: Prepared) -> RunResult:
    model, untrimmed, diag, timings = fit_unit(cfg, prep)
    t0 = time.perf_counter()
    fc = forecast_asdr(model, prep.train, prep.covariates, cfg.horizon, cfg.interval_z)
    timings["forecast"] = time.perf_counter() - t0
    result = RunResult(prep.name, model, untrimmed, diag, fc, fitted_table(model, prep.frame), timings=timings)
    t0 = time.perf_counter()
    result.baseline_name, result.baseline_fitted, result.baseline_forecast = run_baseline(cfg, prep)
    timings["baseline"] = time.perf_counter() - t0
    return result


def evaluate_unit(prep: Prepared, gamm_fitted, gamm_forecast, baseline_name=None, baseline_fitted=None,
                  baseline_forecast=None):
    """Comparison report; without a baseline only the GAMM rows are produced."""
    if prep.test is None:
        raise ValueError(f"{prep.name}: no held-out years after the cutoff")
    train, test = prep.train.records, prep.test.records
    reports = [model_rows("GAMM", train, gamm_fitted, test, gamm_forecast)]
    if baseline_forecast is not None:
        reports.append(model_rows(baseline_name, train, baseline_fitted, test, baseline_forecast))
    else:
        log.warning("%s: no baseline forecasts; report has GAMM rows only", prep.name)
    return compare(reports)


# ------------------------------------------------------------------ outputs


def write_model_outputs(out_dir, result: RunResult, prep: Prepared) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.model.save(out_dir / "model.json")
    result.untrimmed.save(out_dir / "model_untrimmed.json")
    paths = [out_dir / "model.json", out_dir / "model_untrimmed.json"]
    paths += result.diagnostics.write(out_dir)
    paths += plots.write_plot_data(out_dir, prep.train, prep.covariates, prep.frame, result.model)
    return paths


def write_forecast_outputs(out_dir, result: RunResult) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, df):
        # full precision so that evaluate on the files matches an in-memory run
        df.to_csv(out_dir / name, index=False)
        paths.append(out_dir / name)

    emit("gamm_forecast.csv", result.forecast.records)
    emit("gamm_fitted.csv", result.gamm_fitted)
    cf = result.forecast.covariates
    cf.to_csv(out_dir / "kt_forecast.csv", out_dir / "kct_forecast.csv")
    paths += [out_dir / "kt_forecast.csv", out_dir / "kct_forecast.csv"]
    emit("covariate_rwd.csv", cf.fits_table())
    if result.baseline_forecast is not None:
        tag = result.baseline_name.lower()
        emit(f"{tag}_forecast.csv", result.baseline_forecast)
        emit(f"{tag}_fitted.csv", result.baseline_fitted)
    return paths


def write_report(out_dir, report, scale: str = "rate") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "report.csv", out_dir / "report_ratios.csv")
    text = report.to_text(scale) + "\n" + report.to_text("log" if scale == "rate" else "rate")
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    return [out_dir / "report.csv", out_dir / "report_ratios.csv", out_dir / "report.txt"]


def write_run_log(out_dir, cfg: RunConfig, result: RunResult, prep: Prepared) -> Path:
    m = result.model
    info = {
        "unit": result.name,
        "config": cfg.to_dict(),
        "rows_train": int(len(prep.frame)),
        "excluded_cells": int(prep.panel.excluded),
        "retained_fraction": m.retained_fraction,
        "trim": m.trim,
        "reml": {"score": m.reml_score, "iterations": m.iterations, "grad_norm": m.grad_norm,
                 "untrimmed_score": result.untrimmed.reml_score,
                 "untrimmed_iterations": result.untrimmed.iterations},
        "sigma2": m.sigma2,
        "edf": m.edf,
        "edf_total": m.edf_total,
        "acf_lag1": result.diagnostics.lag1,
        "timings_seconds": result.timings,
    }
    path = Path(out_dir) / "run_log.json"
    path.write_text(json.dumps(info, indent=1) + "\n", encoding="utf-8")
    lines = [f"{result.name}: n={m.n} p={m.beta.size} lambdas={m.rho.size}",
             f"retained fraction {m.retained_fraction:.4f}, sigma2 {m.sigma2:.4g}, lag-1 ACF {result.diagnostics.lag1:.4f}",
             m.edf_table().to_string(index=False),
             "timings: " + ", ".join(f"{k} {v:.1f}s" for k, v in result.timings.items())]
    (Path(out_dir) / "run_log.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def unit_dir(out, cfg: RunConfig, name: str) -> Path:
    return Path(out) if cfg.mode == "multi" else Path(out) / name


def _run_and_report(args):
    cfg, prep = args
    result = run_unit(cfg, prep)
    report = evaluate_unit(prep, result.gamm_fitted, result.forecast.records, result.baseline_name,
                           result.baseline_fitted, result.baseline_forecast) if prep.test is not None else None
    return result, report


def run_all(cfg: RunConfig, panel: MortalityPanel | None = None):
    """Full pipeline for every unit; returns ``[(prepared, result, report)]``
    and writes all outputs under ``cfg.out``."""
    panel = load_data(cfg) if panel is None else panel
    units = populations(cfg, panel)
    jobs = [(cfg, p) for p in units]
    if cfg.workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_and_report, jobs))
    else:
        outcomes = [_run_and_report(j) for j in jobs]
    out = []
    reports = []
    for prep, (result, report) in zip(units, outcomes):
        d = unit_dir(cfg.out, cfg, prep.name)
        write_model_outputs(d, result, prep)
        write_forecast_outputs(d, result)
        write_run_log(d, cfg, result, prep)
        if report is not None:
            write_report(d, report)
            reports.append(report)
        out.append((prep, result, report))
    if cfg.mode == "single" and reports:
        combined = compare([r.rows for r in reports])
        write_report(cfg.out, combined)
    return out
