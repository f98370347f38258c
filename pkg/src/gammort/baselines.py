"""Lee-Carter and Li-Lee benchmark models fitted by singular value decomposition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DegenerateError
from .forecasting import rwd_fit, rwd_forecast
from .ingest import MortalityPanel

DEGENERATE_TOL = 1e-10


def log_rate_matrix(panel: MortalityPanel, country: str, gender: str):
    """Age x year matrix of log rates for one population.

    Cells absent from the panel are filled by linear interpolation across
    years within the age (constant beyond the observed years). Returns
    ``(ages, years, Y, n_imputed)``.
    """
    rec = panel.records
    rec = rec[(rec["country"] == country) & (rec["gender"] == gender)]
    if rec.empty:
        raise DegenerateError(f"no records for {country} {gender}")
    years = np.arange(panel.years.min(), panel.years.max() + 1)
    ages = np.arange(panel.ages.min(), panel.ages.max() + 1)
    wide = rec.pivot(index="age", columns="year", values="log_rate").reindex(index=ages, columns=years)
    Y = wide.to_numpy(dtype=float)
    missing = np.isnan(Y)
    for i in np.flatnonzero(missing.any(axis=1)):
        ok = ~missing[i]
        if not ok.any():
            raise DegenerateError(f"age {ages[i]} of {country} {gender} has no observed rates")
        Y[i, ~ok] = np.interp(years[~ok], years[ok], Y[i, ok])
    return ages, years, Y, int(missing.sum())


def _rank1(C: np.ndarray, scale: float):
    """Leading singular pair of ``C`` normalized to ``sum(b) = 1``; ``None`` when
    ``C`` is numerically zero."""
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    if s.size == 0 or s[0] <= DEGENERATE_TOL * max(scale, 1.0):
        return None
    u, v = U[:, 0], Vt[0] * s[0]
    total = u.sum()
    if abs(total) <= DEGENERATE_TOL * np.abs(u).sum():
        raise DegenerateError("age loadings sum to zero; the sum(b) = 1 normalization is undefined")
    return u / total, v * total


@dataclass(frozen=True)
class LeeCarterFit:
    ages: np.ndarray
    years: np.ndarray
    a: np.ndarray
    b: np.ndarray
    kappa: np.ndarray
    n_imputed: int = 0

    def reconstruct(self) -> np.ndarray:
        return self.a[:, None] + self.b[:, None] * self.kappa[None, :]

    def factors(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        return (pd.DataFrame({"age": self.ages, "a": self.a, "b": self.b}),
                pd.DataFrame({"year": self.years, "kappa": self.kappa}))

    def to_csv(self, age_path, year_path) -> None:
        ages, years = self.factors()
        ages.to_csv(age_path, index=False, float_format="%.12g")
        years.to_csv(year_path, index=False, float_format="%.12g")


def lee_carter_matrix(Y, ages=None, years=None, n_imputed: int = 0) -> LeeCarterFit:
    """Lee-Carter on an age x year log-rate matrix: ``a`` are row means and
    ``(b, kappa)`` the leading singular pair of the centered matrix, scaled to
    ``sum(b) = 1`` (``sum(kappa) = 0`` follows from the centering)."""
    Y = np.asarray(Y, dtype=float)
    ages = np.arange(Y.shape[0]) if ages is None else np.asarray(ages)
    years = np.arange(Y.shape[1]) if years is None else np.asarray(years)
    a = Y.mean(axis=1)
    C = Y - a[:, None]
    pair = _rank1(C, np.abs(Y).max(initial=0.0))
    if pair is None:
        raise DegenerateError("centered log-rate matrix has rank 0")
    b, kappa = pair
    return LeeCarterFit(ages, years, a, b, kappa - kappa.mean(), n_imputed)


def lee_carter_fit(panel: MortalityPanel, country: str | None = None, gender: str | None = None) -> LeeCarterFit:
    country = country or panel.countries[0]
    gender = gender or panel.genders[0]
    ages, years, Y, n_imp = log_rate_matrix(panel, country, gender)
    return lee_carter_matrix(Y, ages, years, n_imp)


def lee_carter_forecast(fit: LeeCarterFit, horizon: int) -> pd.DataFrame:
    """Long table (age, year, log_rate_hat) with kappa extended by a random walk with drift."""
    k = rwd_forecast(rwd_fit(pd.Series(fit.kappa, index=fit.years)), horizon)
    eta = fit.a[:, None] + fit.b[:, None] * k.to_numpy()[None, :]
    aa, yy = np.meshgrid(fit.ages, k.index.to_numpy(), indexing="ij")
    return pd.DataFrame({"age": aa.ravel(), "year": yy.ravel(), "log_rate_hat": eta.ravel()})


@dataclass(frozen=True)
class LiLeeFit:
    """Common factor ``B K`` shared by all populations plus a population-specific
    ``b_c k_c`` fitted to what the common factor leaves."""

    populations: tuple
    ages: np.ndarray
    years: np.ndarray
    a: dict
    B: np.ndarray
    K: np.ndarray
    b: dict
    k: dict
    degenerate: tuple = ()
    n_imputed: int = 0

    def reconstruct(self, pop) -> np.ndarray:
        return (self.a[pop][:, None] + self.B[:, None] * self.K[None, :]
                + self.b[pop][:, None] * self.k[pop][None, :])


def li_lee_matrices(mats: dict, ages=None, years=None, n_imputed: int = 0) -> LiLeeFit:
    """Li-Lee on ``{population: age x year log-rate matrix}``."""
    pops = tuple(mats)
    if len(pops) < 2:
        raise ValueError("Li-Lee needs at least two populations")
    Ys = {p: np.asarray(mats[p], dtype=float) for p in pops}
    shape = Ys[pops[0]].shape
    if any(Y.shape != shape for Y in Ys.values()):
        raise ValueError("population matrices differ in shape")
    ages = np.arange(shape[0]) if ages is None else np.asarray(ages)
    years = np.arange(shape[1]) if years is None else np.asarray(years)
    pooled = lee_carter_matrix(np.mean([Ys[p] for p in pops], axis=0), ages, years)
    B, K = pooled.b, pooled.kappa
    a, b, k, degenerate = {}, {}, {}, []
    common = B[:, None] * K[None, :]
    for p in pops:
        a[p] = Ys[p].mean(axis=1)
        R = Ys[p] - a[p][:, None] - common
        pair = _rank1(R, np.abs(Ys[p]).max(initial=0.0))
        if pair is None:
            b[p], k[p] = np.full(shape[0], 1.0 / shape[0]), np.zeros(shape[1])
            degenerate.append(p)
        else:
            b[p], k[p] = pair[0], pair[1] - pair[1].mean()
    return LiLeeFit(pops, ages, years, a, B, K, b, k, tuple(degenerate), n_imputed)


def li_lee_fit(panel: MortalityPanel, gender: str, countries=None) -> LiLeeFit:
    """Li-Lee across the countries of ``panel`` for one gender."""
    countries = list(countries or panel.countries)
    mats, n_imp, ages, years = {}, 0, None, None
    for c in countries:
        ages, years, Y, ni = log_rate_matrix(panel, c, gender)
        mats[c] = Y
        n_imp += ni
    return li_lee_matrices(mats, ages, years, n_imp)


def li_lee_forecast(fit: LiLeeFit, horizon: int) -> pd.DataFrame:
    """Long table (population, age, year, log_rate_hat); ``K`` and every ``k_c``
    are extended by random walks with drift."""
    Kf = rwd_forecast(rwd_fit(pd.Series(fit.K, index=fit.years)), horizon)
    fyears = Kf.index.to_numpy()
    parts = []
    for p in fit.populations:
        kf = rwd_forecast(rwd_fit(pd.Series(fit.k[p], index=fit.years)), horizon).to_numpy()
        eta = fit.a[p][:, None] + fit.B[:, None] * Kf.to_numpy()[None, :] + fit.b[p][:, None] * kf[None, :]
        aa, yy = np.meshgrid(fit.ages, fyears, indexing="ij")
        parts.append(pd.DataFrame({"population": [p] * aa.size, "age": aa.ravel(), "year": yy.ravel(),
                                   "log_rate_hat": eta.ravel()}))
    return pd.concat(parts, ignore_index=True)


def _long(ages, years, eta, **keys) -> pd.DataFrame:
    aa, yy = np.meshgrid(ages, years, indexing="ij")
    return pd.DataFrame({"age": aa.ravel(), "year": yy.ravel(), "log_rate_hat": eta.ravel()}).assign(**keys)


def _finish(parts) -> pd.DataFrame:
    df = pd.concat(parts, ignore_index=True)
    df["rate_hat"] = np.exp(df["log_rate_hat"])
    return df[["country", "gender", "age", "year", "log_rate_hat", "rate_hat"]] \
        .sort_values(["country", "gender", "age", "year"], ignore_index=True)


def lee_carter_panel(panel: MortalityPanel, horizon: int) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Lee-Carter per (country, gender) population of ``panel``.

    Returns long tables of in-sample fitted and forecast log rates.
    """
    fitted, forecast = [], []
    for c in panel.countries:
        for g in panel.genders:
            fit = lee_carter_fit(panel, c, g)
            fitted.append(_long(fit.ages, fit.years, fit.reconstruct(), country=c, gender=g))
            forecast.append(lee_carter_forecast(fit, horizon).assign(country=c, gender=g))
    return _finish(fitted), _finish(forecast)


def li_lee_panel(panel: MortalityPanel, horizon: int) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Li-Lee per gender across the countries of ``panel``; returns fitted and
    forecast long tables."""
    fitted, forecast = [], []
    for g in panel.genders:
        fit = li_lee_fit(panel, g)
        for c in fit.populations:
            fitted.append(_long(fit.ages, fit.years, fit.reconstruct(c), country=c, gender=g))
        fc = li_lee_forecast(fit, horizon)
        forecast.append(fc.rename(columns={"population": "country"}).assign(gender=g))
    return _finish(fitted), _finish(forecast)
