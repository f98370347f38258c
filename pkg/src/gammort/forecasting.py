"""Random-walk-with-drift covariate forecasts and projected death rates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .covariates import SEGMENTS, CovariateSet, attach_covariates
from .errors import GapError
from .ingest import MortalityPanel


@dataclass(frozen=True)
class RwdFit:
    drift: float
    sd: float
    last_value: float
    last_year: int

    def advance(self, h: int) -> "RwdFit":
        """The same walk restarted from its own ``h``-step point forecast."""
        return RwdFit(self.drift, self.sd, self.last_value + h * self.drift, self.last_year + h)


def _as_series(series) -> pd.Series:
    s = series if isinstance(series, pd.Series) else pd.Series(dict(series))
    return s.sort_index()


def rwd_fit(series) -> RwdFit:
    """Drift is the mean first difference, ``(last - first)/(T - 1)``; the
    innovation SD is the sample SD of the first differences."""
    s = _as_series(series)
    years = s.index.to_numpy()
    if years.size < 3:
        raise ValueError("random walk fit needs at least 3 years")
    if (np.diff(years) != 1).any():
        raise GapError(f"series has gaps between {int(years[0])} and {int(years[-1])}")
    y = s.to_numpy(dtype=float)
    d = np.diff(y)
    return RwdFit(float((y[-1] - y[0]) / (y.size - 1)), float(d.std(ddof=1)), float(y[-1]), int(years[-1]))


def rwd_forecast(fit: RwdFit, horizon: int) -> pd.Series:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    h = np.arange(1, horizon + 1)
    return pd.Series(fit.last_value + h * fit.drift, index=pd.Index(fit.last_year + h, name="year"))


def rwd_band(fit: RwdFit, horizon: int, z: float = 1.96) -> tuple[pd.Series, pd.Series]:
    """Point forecast minus/plus ``z * sd * sqrt(h)``."""
    mid = rwd_forecast(fit, horizon)
    half = z * fit.sd * np.sqrt(np.arange(1, horizon + 1))
    return mid - half, mid + half


@dataclass
class CovariateForecast:
    kt: RwdFit
    kct: dict
    future: CovariateSet
    horizon: int

    def shifted(self, z: float) -> CovariateSet:
        """Future covariates moved by ``z`` innovation SDs times ``sqrt(h)``."""
        h = np.sqrt(self.future.kt.index.to_numpy() - self.kt.last_year)
        kt = self.future.kt + z * self.kt.sd * h
        kct = self.future.kct.copy()
        years = kct.index.get_level_values("year").to_numpy()
        for (c, seg), fit in self.kct.items():
            sel = (kct.index.get_level_values("country") == c) & (kct.index.get_level_values("segment") == seg)
            kct[sel] = kct[sel] + z * fit.sd * np.sqrt(years[sel] - fit.last_year)
        return CovariateSet(kt, kct, self.future.split_age)

    def to_csv(self, kt_path, kct_path) -> None:
        self.future.to_csv(kt_path, kct_path)

    def fits_table(self) -> pd.DataFrame:
        rows = [{"series": "kt", "country": "", "segment": "", "drift": self.kt.drift, "sd": self.kt.sd,
                 "last_value": self.kt.last_value, "last_year": self.kt.last_year}]
        for (c, seg), f in sorted(self.kct.items()):
            rows.append({"series": "kct", "country": c, "segment": seg, "drift": f.drift, "sd": f.sd,
                         "last_value": f.last_value, "last_year": f.last_year})
        return pd.DataFrame(rows)


def forecast_covariates(cov: CovariateSet, horizon: int) -> CovariateForecast:
    kt_fit = rwd_fit(cov.kt)
    kt = rwd_forecast(kt_fit, horizon).rename("kt")
    fits, parts = {}, []
    for c in cov.countries:
        for seg in SEGMENTS:
            f = rwd_fit(cov.kct_series(c, seg))
            fits[(c, seg)] = f
            fc = rwd_forecast(f, horizon)
            parts.append(pd.DataFrame({"country": c, "segment": seg, "year": fc.index, "kct": fc.to_numpy()}))
    kct = pd.concat(parts, ignore_index=True).set_index(["country", "segment", "year"])["kct"]
    return CovariateForecast(kt_fit, fits, CovariateSet(kt, kct, cov.split_age), horizon)


def future_frame(cells: pd.DataFrame, years, covariates: CovariateSet) -> pd.DataFrame:
    """Every (country, gender, age) cell crossed with ``years``, with cohort
    and the covariates attached."""
    years = np.asarray(list(years), dtype=np.int64)
    cells = cells[["country", "gender", "age"]].drop_duplicates().sort_values(["country", "gender", "age"])
    n = len(cells)
    frame = pd.DataFrame({
        "country": np.repeat(cells["country"].to_numpy(), years.size),
        "gender": np.repeat(cells["gender"].to_numpy(), years.size),
        "age": np.repeat(cells["age"].to_numpy(), years.size),
        "year": np.tile(years, n),
    })
    frame["cohort"] = frame["year"] - frame["age"]
    return attach_covariates(frame, covariates)


def predict(model, future: pd.DataFrame) -> np.ndarray:
    return model.predict(future)


@dataclass
class ForecastPanel:
    records: pd.DataFrame
    covariates: CovariateForecast | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path) -> None:
        self.records.to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path) -> "ForecastPanel":
        return cls(pd.read_csv(path, dtype={"country": object, "gender": object}))


FORECAST_COLUMNS = ["country", "gender", "age", "year", "log_rate_hat", "rate_hat"]


def forecast_asdr(model, panel: MortalityPanel, covariates: CovariateSet, horizon: int,
                  z: float | None = None) -> ForecastPanel:
    """Project log death rates ``horizon`` years past the training panel.

    ``kt`` and every (country, segment) ``kct`` series are extended by random
    walks with drift; the model is evaluated on the resulting future frame.
    With ``z`` set, ``lo``/``hi`` columns hold predictions at covariates
    shifted by -z/+z innovation SDs times ``sqrt(h)``.
    """
    if horizon == 0:
        return ForecastPanel(pd.DataFrame(columns=FORECAST_COLUMNS))
    cf = forecast_covariates(covariates, horizon)
    years = cf.future.kt.index.to_numpy()
    frame = future_frame(panel.records, years, cf.future)
    eta = model.predict(frame)
    out = frame[["country", "gender", "age", "year"]].reset_index(drop=True)
    out["log_rate_hat"] = eta
    out["rate_hat"] = np.exp(eta)
    if z is not None:
        lo_f = model.predict(future_frame(panel.records, years, cf.shifted(-z)))
        hi_f = model.predict(future_frame(panel.records, years, cf.shifted(z)))
        out["lo"] = np.exp(np.minimum(lo_f, hi_f))
        out["hi"] = np.exp(np.maximum(lo_f, hi_f))
    return ForecastPanel(out, cf, {"horizon": horizon, "first_year": int(years[0]), "last_year": int(years[-1])})
