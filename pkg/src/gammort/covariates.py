"""Mortality covariates: the all-population level ``kt`` and the per-country
age-segment levels ``kct``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import JoinError, MissingSegmentError, MissingYearError
from .ingest import MortalityPanel

SEGMENTS = ("low", "high")
DEFAULT_SPLIT_AGE = 40


@dataclass(frozen=True)
class CovariateSet:
    """``kt`` is indexed by year; ``kct`` by (country, segment, year)."""

    kt: pd.Series
    kct: pd.Series
    split_age: int = DEFAULT_SPLIT_AGE

    @property
    def years(self) -> np.ndarray:
        return self.kt.index.to_numpy()

    @property
    def countries(self) -> list[str]:
        return sorted(self.kct.index.get_level_values("country").unique())

    def kct_series(self, country: str, segment: str) -> pd.Series:
        return self.kct.xs((country, segment), level=("country", "segment"))

    def to_csv(self, kt_path, kct_path) -> None:
        self.kt.rename("kt").rename_axis("year").reset_index().to_csv(kt_path, index=False, float_format="%.12g")
        self.kct.rename("kct").reset_index().to_csv(kct_path, index=False, float_format="%.12g")

    @classmethod
    def from_csv(cls, kt_path, kct_path, split_age=DEFAULT_SPLIT_AGE) -> "CovariateSet":
        kt = pd.read_csv(kt_path).set_index("year")["kt"]
        kct = pd.read_csv(kct_path, dtype={"country": object}).set_index(["country", "segment", "year"])["kct"]
        return cls(kt, kct, split_age)


def segment_of(age, split_age: int = DEFAULT_SPLIT_AGE):
    """Age-segment label; the split age itself belongs to the low segment."""
    return np.where(np.asarray(age) <= split_age, "low", "high")


def compute_kt(panel: MortalityPanel) -> pd.Series:
    """Mean log rate over all countries, genders and ages present in each year.

    When zero-rate cells were excluded the mean is over present cells only.
    """
    rec = panel.records
    if rec.empty:
        raise MissingYearError("empty panel")
    kt = rec.groupby("year")["log_rate"].mean().sort_index()
    expected = np.arange(kt.index.min(), kt.index.max() + 1)
    missing = np.setdiff1d(expected, kt.index.to_numpy())
    if missing.size:
        raise MissingYearError(f"no records for years {missing.tolist()}")
    kt.name = "kt"
    return kt


def compute_kct(panel: MortalityPanel, split_age: int = DEFAULT_SPLIT_AGE) -> pd.Series:
    """Per (country, segment, year) mean of log rates over both genders."""
    if not 0 < split_age < panel.omega:
        raise ValueError(f"split_age must lie strictly between 0 and {panel.omega}")
    rec = panel.records
    seg = pd.Series(segment_of(rec["age"].to_numpy(), split_age), index=rec.index, name="segment")
    kct = rec.assign(segment=seg).groupby(["country", "segment", "year"])["log_rate"].mean()
    years = np.unique(rec["year"].to_numpy())
    full = pd.MultiIndex.from_product([sorted(rec["country"].unique()), list(SEGMENTS), years],
                                      names=["country", "segment", "year"])
    missing = full.difference(kct.index)
    if len(missing):
        c, s, y = missing[0]
        raise MissingSegmentError(f"no records for country {c}, segment {s}, year {y} "
                                  f"({len(missing)} empty cells)")
    kct = kct.reindex(full)
    kct.name = "kct"
    return kct


def compute_covariates(panel: MortalityPanel, split_age: int = DEFAULT_SPLIT_AGE) -> CovariateSet:
    return CovariateSet(compute_kt(panel), compute_kct(panel, split_age), split_age)


def attach_covariates(records, covariates: CovariateSet) -> pd.DataFrame:
    """Join ``kt`` and the segment-resolved ``kct`` onto each record.

    ``records`` is a panel or any frame with country, age and year columns.
    """
    rec = records.records if isinstance(records, MortalityPanel) else records
    frame = rec.copy()
    years = frame["year"].to_numpy()
    kt = covariates.kt.reindex(years).to_numpy()
    if np.isnan(kt).any():
        bad = np.unique(years[np.isnan(kt)])
        raise JoinError(f"kt not available for years {bad.tolist()}")
    frame["kt"] = kt
    segment = segment_of(frame["age"].to_numpy(), covariates.split_age)
    key = pd.MultiIndex.from_arrays([frame["country"].to_numpy(), segment, years],
                                    names=["country", "segment", "year"])
    kct = covariates.kct.reindex(key).to_numpy()
    if np.isnan(kct).any():
        i = int(np.flatnonzero(np.isnan(kct))[0])
        raise JoinError(f"kct not available for {key[i]}")
    frame["kct"] = kct
    frame["segment"] = segment
    return frame
