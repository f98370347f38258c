"""Plot-ready tables: raw trajectories, covariates, smooth curves on grids and
fitted values against the covariates. No rendering happens here."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .covariates import CovariateSet
from .ingest import MortalityPanel


def smooth_curves(model, n: int = 50) -> pd.DataFrame:
    """Each smooth term evaluated on an even grid over its training range,
    once per factor level (long format: term, level, x, value)."""
    parts = []
    for t in model.terms:
        covariate = getattr(t, "covariate", None)
        if covariate is None or t.boundary is None:
            continue
        lo, hi = t.boundary
        x = np.linspace(lo, hi, n)
        a, b = model.column_map[t.label]
        factors = getattr(t, "factors", ())
        levels = t.levels if factors else [()]
        grid = pd.DataFrame({covariate: np.tile(x, len(levels))})
        for i, f in enumerate(factors):
            grid[f] = np.repeat([lv[i] for lv in levels], n)
        value = np.asarray(t.design(grid) @ model.beta[a:b]).ravel()
        label = [":".join(str(v) for v in lv) for lv in levels]
        parts.append(pd.DataFrame({"term": t.label, "level": np.repeat(label, n),
                                   "x": grid[covariate].to_numpy(), "value": value}))
    if not parts:
        return pd.DataFrame(columns=["term", "level", "x", "value"])
    return pd.concat(parts, ignore_index=True)


def write_plot_data(out_dir, panel: MortalityPanel, covariates: CovariateSet, frame: pd.DataFrame,
                    model=None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, df):
        path = out_dir / name
        df.to_csv(path, index=False, float_format="%.10g")
        paths.append(path)

    emit("asdr_trajectories.csv", panel.records[["country", "gender", "age", "year", "rate", "log_rate"]])
    emit("kt.csv", covariates.kt.rename("kt").rename_axis("year").reset_index())
    emit("kct.csv", covariates.kct.rename("kct").reset_index())
    cols = ["country", "gender", "age", "year", "kt", "kct", "log_rate"]
    emit("lograte_vs_kt.csv", frame[cols])
    if model is not None:
        emit("smooth_curves.csv", smooth_curves(model))
        emit("fitted_vs_kt.csv", frame[cols].assign(fitted=model.predict(frame)))
    return paths
