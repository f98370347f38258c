"""Command-line entry point.

Every subcommand reads the same run configuration and works inside the
output directory, so ``fit``, ``forecast`` and ``evaluate`` can be run one
after another or all at once with ``run-all``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from . import __version__, pipeline
from .config import ENV_PREFIX, RunConfig, load_config
from .diagnostics import diagnose
from .errors import ConfigError, GammortError
from .evaluation import compare
from .forecasting import ForecastPanel, forecast_asdr
from .gam import FittedModel, trim_mask
from .ingest import demo_synth_spec, synth_panel, write_hmd_file


ENV_HELP = f"""\
environment:
  every configuration field can be set as {ENV_PREFIX}<FIELD>, e.g.
  {ENV_PREFIX}DATA_DIR=/data/hmd, {ENV_PREFIX}THRESHOLD=0.1,
  {ENV_PREFIX}SPLIT_AGE=40, {ENV_PREFIX}COUNTRIES=AUT,CZE.
  {ENV_PREFIX}HMD_DIR is the fallback data directory when none is configured.
  Precedence: defaults < --config file < environment < command-line flags.
"""


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data-dir", help="directory with <CODE>.Mx_1x1.txt files")
    p.add_argument("--mode", choices=("multi", "single"), help="joint multi-population model or one model per population")
    p.add_argument("--cutoff", type=int, help="last training year")
    p.add_argument("--horizon", type=int, help="forecast years after the cutoff")
    p.add_argument("--countries", help="comma-separated country codes")
    p.add_argument("--years", help="first and last year, e.g. 1961-2019")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel workers for single-population runs")
    p.add_argument("--seed", type=int, help="seed for synthetic data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gammort", description="Additive mixed models for multi-population mortality forecasting.",
        epilog=ENV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "read rate files, write the panel and covariate tables",
        "fit": "fit the model, trim outliers, refit and write diagnostics",
        "diagnose": "recompute residual diagnostics for a saved model",
        "forecast": "forecast covariates and rates from a saved model, plus the baseline",
        "evaluate": "compare forecasts with held-out years",
        "synth": "write synthetic rate files for testing",
        "run-all": "fit, forecast and evaluate in one go",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text, epilog=ENV_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
        if name in ("diagnose", "forecast"):
            p.add_argument("--model", help="model JSON (default: <out>/model.json)")
        if name == "forecast":
            p.add_argument("--interval-z", type=float, help="add lo/hi columns from covariates shifted by z SDs")
            p.add_argument("--no-baseline", action="store_true", help="skip the Lee-Carter/Li-Lee baseline")
    return parser


def config_from_args(args) -> RunConfig:
    flags = {"data_dir": args.data_dir, "mode": args.mode, "cutoff": args.cutoff, "horizon": args.horizon,
             "countries": args.countries, "year_range": args.years, "out": args.out,
             "workers": args.workers, "seed": args.seed, "interval_z": getattr(args, "interval_z", None)}
    return load_config(args.config, flags)


def _units(cfg):
    panel = pipeline.load_data(cfg)
    return pipeline.populations(cfg, panel)


def _model_path(args, cfg, unit) -> Path:
    if getattr(args, "model", None) and cfg.mode == "multi":
        return Path(args.model)
    return pipeline.unit_dir(cfg.out, cfg, unit.name) / "model.json"


def cmd_ingest(args, cfg) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    panel = pipeline.load_data(cfg)
    panel.to_csv(out / "panel.csv")
    prep = pipeline.prepare(cfg, panel)
    prep.covariates.to_csv(out / "kt.csv", out / "kct.csv")
    print(f"{len(panel)} records, {panel.excluded} cells excluded; wrote {out}/panel.csv, kt.csv, kct.csv")


def cmd_fit(args, cfg) -> None:
    for unit in _units(cfg):
        d = pipeline.unit_dir(cfg.out, cfg, unit.name)
        model, untrimmed, diag, timings = pipeline.fit_unit(cfg, unit)
        result = pipeline.RunResult(unit.name, model, untrimmed, diag, None, None, timings=timings)
        pipeline.write_model_outputs(d, result, unit)
        pipeline.write_run_log(d, cfg, result, unit)
        print(f"{unit.name}: {len(model.terms)} terms, retained {model.retained_fraction:.4f}, "
              f"lag-1 ACF {diag.lag1:.4f}; wrote {d}/model.json")


def cmd_diagnose(args, cfg) -> None:
    for unit in _units(cfg):
        path = _model_path(args, cfg, unit)
        model = FittedModel.load(path)
        frame = unit.frame
        if model.trim is not None:
            untrimmed = FittedModel.load(path.with_name("model_untrimmed.json"))
            frame = frame.loc[trim_mask(untrimmed, frame, model.trim["threshold"])]
        diag = diagnose(model, frame, cfg.max_lag)
        d = pipeline.unit_dir(cfg.out, cfg, unit.name)
        diag.write(d)
        print(f"{unit.name}: lag-1 ACF {diag.lag1:.4f} over {diag.acf.attrs.get('n_series', 0)} series; wrote {d}")


def cmd_forecast(args, cfg) -> None:
    for unit in _units(cfg):
        model = FittedModel.load(_model_path(args, cfg, unit))
        d = pipeline.unit_dir(cfg.out, cfg, unit.name)
        fc = forecast_asdr(model, unit.train, unit.covariates, cfg.horizon, cfg.interval_z)
        result = pipeline.RunResult(unit.name, model, model, None, fc, pipeline.fitted_table(model, unit.frame))
        if not args.no_baseline:
            result.baseline_name, result.baseline_fitted, result.baseline_forecast = pipeline.run_baseline(cfg, unit)
        pipeline.write_forecast_outputs(d, result)
        years = fc.records["year"]
        print(f"{unit.name}: forecast {years.min()}-{years.max()}; wrote {d}/gamm_forecast.csv")


def cmd_evaluate(args, cfg) -> None:
    reports = []
    for unit in _units(cfg):
        d = pipeline.unit_dir(cfg.out, cfg, unit.name)
        gamm_fc = ForecastPanel.read_csv(d / "gamm_forecast.csv").records
        gamm_fit = pd.read_csv(d / "gamm_fitted.csv")
        base = None
        for tag in ("ll", "lc"):
            if (d / f"{tag}_forecast.csv").exists():
                base = (tag.upper(), pd.read_csv(d / f"{tag}_fitted.csv"), pd.read_csv(d / f"{tag}_forecast.csv"))
                break
        if base is None:
            print(f"warning: {unit.name}: no baseline forecasts, report has GAMM rows only", file=sys.stderr)
            base = (None, None, None)
        report = pipeline.evaluate_unit(unit, gamm_fit, gamm_fc, *base)
        pipeline.write_report(d, report)
        reports.append(report)
        print(report.to_text("rate"))
    if cfg.mode == "single" and len(reports) > 1:
        pipeline.write_report(cfg.out, compare([r.rows for r in reports]))


def cmd_synth(args, cfg) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    y0, y1 = cfg.year_range
    spec = demo_synth_spec(tuple(cfg.countries), range(y0, y1 + 1), cfg.omega, cfg.synth_noise)
    panel = synth_panel(spec, cfg.seed)
    for c in panel.countries:
        write_hmd_file(panel, c, out / f"{c}.Mx_1x1.txt")
    print(f"wrote {len(panel.countries)} synthetic rate files to {out}")


def cmd_run_all(args, cfg) -> None:
    for prep, result, report in pipeline.run_all(cfg):
        print(f"{prep.name}: retained {result.model.retained_fraction:.4f}, lag-1 ACF {result.diagnostics.lag1:.4f}")
        if report is not None:
            print(report.to_text("rate"))
    print(f"outputs in {cfg.out}")


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "diagnose": cmd_diagnose, "forecast": cmd_forecast,
            "evaluate": cmd_evaluate, "synth": cmd_synth, "run-all": cmd_run_all}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"gammort: configuration error: {exc}", file=sys.stderr)
        return 2
    except (GammortError, FileNotFoundError, ValueError) as exc:
        print(f"gammort {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
