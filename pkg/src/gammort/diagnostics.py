"""Residual diagnostics: residuals against fitted values, normal QQ points and
the residual autocorrelation function."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import UndefinedACFError

SERIES_KEYS = ["country", "gender", "age"]


def acf(residuals, max_lag: int = 20) -> np.ndarray:
    """Sample autocorrelation ``acf[h] = sum (r_t - m)(r_{t+h} - m) / sum (r_t - m)^2``.

    NaN entries mark missing time points: the mean uses the present values and
    lag ``h`` sums over the pairs with both ends present, divided by
    ``pairs + h`` so that a complete series gives the textbook estimator.
    """
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    if n <= max_lag:
        raise ValueError(f"series of length {n} is too short for lag {max_lag}")
    present = ~np.isnan(r)
    if present.sum() < 2:
        raise UndefinedACFError("fewer than two observed values")
    x = np.where(present, r - r[present].mean(), 0.0)
    out = np.empty(max_lag + 1)
    for h in range(max_lag + 1):
        pairs = int((present[h:] & present[:n - h]).sum())
        out[h] = (x[h:] * x[:n - h]).sum() / (pairs + h) if pairs else np.nan
    if not out[0] > 0:
        raise UndefinedACFError("constant series has no autocorrelation")
    return out / out[0]


def panel_acf(table: pd.DataFrame, max_lag: int = 20, value: str = "residual") -> pd.DataFrame:
    """Equal-weight average over (country, gender, age) series of the per-series ACF.

    Each series runs over the full year span of ``table``; years absent from a
    series (trimmed or excluded cells) are treated as missing. Series whose ACF
    is undefined are skipped and counted. Panels spanning ``max_lag`` years or
    fewer are reported up to lag ``T - 1``.
    """
    years = np.arange(table["year"].min(), table["year"].max() + 1)
    T = years.size
    max_lag = min(max_lag, T - 1)
    if max_lag < 1:
        raise UndefinedACFError("panel spans a single year")
    keys = table[SERIES_KEYS].drop_duplicates().sort_values(SERIES_KEYS).reset_index(drop=True)
    sid = pd.MultiIndex.from_frame(keys).get_indexer(pd.MultiIndex.from_frame(table[SERIES_KEYS]))
    grid = np.full((len(keys), T), np.nan)
    grid[sid, table["year"].to_numpy() - years[0]] = table[value].to_numpy(dtype=float)
    rows, skipped = [], 0
    for series in grid:
        try:
            rows.append(acf(series, max_lag))
        except (UndefinedACFError, ValueError):
            skipped += 1
    if not rows:
        raise UndefinedACFError("no series with a defined autocorrelation")
    coefs = np.nanmean(np.vstack(rows), axis=0)
    out = pd.DataFrame({"lag": np.arange(max_lag + 1), "coef": coefs})
    out.attrs.update(n_series=len(rows), skipped=skipped)
    return out


def qq_points(residuals) -> pd.DataFrame:
    """Normal QQ pairs ``(Phi^-1((i - 0.5)/n), i-th smallest standardized residual)``,
    standardized with the population standard deviation."""
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if n < 3:
        raise ValueError("need at least 3 residuals")
    sd = r.std()
    z = np.sort((r - r.mean()) / sd) if sd > 0 else np.zeros(n)
    theo = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return pd.DataFrame({"theoretical": theo, "sample": z})


def residuals_vs_fitted(model, frame: pd.DataFrame) -> pd.DataFrame:
    fitted = model.predict(frame)
    resid = frame[model.spec.response].to_numpy(dtype=float) - fitted
    out = frame[["country", "gender", "age", "year"]].reset_index(drop=True).copy()
    out.insert(0, "residual", resid)
    out.insert(0, "fitted", fitted)
    return out


def heteroskedasticity(table: pd.DataFrame, bins: int = 10) -> pd.DataFrame:
    """Residual spread per fitted-value quantile bin."""
    q = pd.qcut(table["fitted"], bins, labels=False, duplicates="drop")
    g = table.groupby(q)
    return pd.DataFrame({
        "bin": g["fitted"].mean().index.astype(int),
        "fitted_mean": g["fitted"].mean().to_numpy(),
        "residual_sd": g["residual"].std(ddof=0).to_numpy(),
        "n": g.size().to_numpy(),
    })


@dataclass
class DiagnosticsReport:
    table: pd.DataFrame
    qq: pd.DataFrame
    acf: pd.DataFrame
    spread: pd.DataFrame

    @property
    def residuals(self) -> np.ndarray:
        return self.table["residual"].to_numpy()

    @property
    def fitted(self) -> np.ndarray:
        return self.table["fitted"].to_numpy()

    @property
    def lag1(self) -> float:
        return float(self.acf.loc[self.acf["lag"] == 1, "coef"].iloc[0])

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, df in (("resid_fitted.csv", self.table), ("qq.csv", self.qq), ("acf.csv", self.acf),
                         ("resid_spread.csv", self.spread)):
            path = out_dir / name
            df.to_csv(path, index=False, float_format="%.10g")
            paths.append(path)
        return paths


def diagnose(model, frame: pd.DataFrame, max_lag: int = 20) -> DiagnosticsReport:
    table = residuals_vs_fitted(model, frame)
    return DiagnosticsReport(table, qq_points(table["residual"]), panel_acf(table, max_lag),
                             heteroskedasticity(table))
