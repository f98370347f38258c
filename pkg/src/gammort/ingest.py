"""Reading HMD death-rate files and assembling long-format mortality panels."""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CoverageError, DuplicateKeyError, EmptyPanelError, ParseError

GENDERS = ("female", "male")
PANEL_COLUMNS = ["country", "gender", "age", "year", "rate", "log_rate", "cohort"]
MAX_AGE = 110
DEFAULT_OMEGA = 100


@dataclass(frozen=True)
class MortalityTable:
    """Death rates of one country in HMD 1x1 layout.

    ``data`` has columns year, age, female, male; missing rates are NaN.
    """

    country: str
    data: pd.DataFrame

    def __post_init__(self):
        d = self.data
        if len(d) and (d["age"].min() < 0 or d["age"].max() > MAX_AGE):
            raise ParseError(f"{self.country}: ages outside 0..{MAX_AGE}")
        for g in GENDERS:
            if (d[g] < 0).any():
                raise ParseError(f"{self.country}: negative {g} rate")
        steps = d.sort_values(["age", "year"]).groupby("age")["year"].diff()
        if (steps <= 0).any():
            raise DuplicateKeyError(f"{self.country}: years not strictly increasing within an age")

    @property
    def years(self) -> np.ndarray:
        return np.unique(self.data["year"].to_numpy())

    @property
    def ages(self) -> np.ndarray:
        return np.unique(self.data["age"].to_numpy())


def _parse_rate(token: str, lineno: int) -> float:
    if token == ".":
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"malformed rate {token!r}", lineno) from None
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"invalid rate {token!r}", lineno)
    return value


def parse_hmd_mx(text_stream, country: str | None = None) -> MortalityTable:
    """Parse an HMD ``Mx_1x1`` text stream.

    Header lines are skipped up to the ``Year Age Female Male Total`` line.
    The open age group ``110+`` maps to 110 and ``.`` to a missing rate.
    """
    if isinstance(text_stream, str):
        text_stream = io.StringIO(text_stream)
    years, ages, female, male = [], [], [], []
    seen = set()
    in_body = False
    title = None
    for lineno, raw in enumerate(text_stream, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if not in_body:
            if tokens[0] == "Year":
                in_body = True
            elif title is None:
                title = raw.strip()
            continue
        if len(tokens) != 5:
            raise ParseError(f"expected 5 fields, got {len(tokens)}", lineno)
        try:
            year = int(tokens[0])
        except ValueError:
            raise ParseError(f"malformed year {tokens[0]!r}", lineno) from None
        age_token = tokens[1].rstrip("+")
        try:
            age = int(age_token)
        except ValueError:
            raise ParseError(f"malformed age {tokens[1]!r}", lineno) from None
        if (year, age) in seen:
            raise DuplicateKeyError(f"line {lineno}: duplicate (year, age) = ({year}, {age})")
        seen.add((year, age))
        years.append(year)
        ages.append(age)
        female.append(_parse_rate(tokens[2], lineno))
        male.append(_parse_rate(tokens[3], lineno))
    if not in_body:
        raise ParseError("no 'Year Age Female Male Total' header found")
    if country is None:
        country = (title or "UNK").split(",")[0].strip() or "UNK"
    data = pd.DataFrame(
        {"year": np.asarray(years, dtype=np.int64), "age": np.asarray(ages, dtype=np.int64),
         "female": np.asarray(female, dtype=float), "male": np.asarray(male, dtype=float)}
    )
    return MortalityTable(country, data.sort_values(["year", "age"], ignore_index=True))


def read_hmd_file(path, country: str | None = None) -> MortalityTable:
    """Read ``<CODE>.Mx_1x1.txt``; the country code defaults to the file-name prefix."""
    path = Path(path)
    if country is None:
        country = path.name.split(".")[0]
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_hmd_mx(fh, country)


def find_hmd_file(data_dir, country: str) -> Path:
    data_dir = Path(data_dir)
    for name in (f"{country}.Mx_1x1.txt", f"{country}/STATS/Mx_1x1.txt", f"{country}_Mx_1x1.txt"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"no Mx_1x1 file for {country} under {data_dir}")


@dataclass(frozen=True)
class MortalityPanel:
    """Long-format panel: one record per (country, gender, age, year) with rate > 0."""

    records: pd.DataFrame
    omega: int
    excluded: int = 0
    excluded_cells: tuple = field(default=(), repr=False)

    @property
    def countries(self) -> list[str]:
        return sorted(self.records["country"].unique())

    @property
    def genders(self) -> list[str]:
        return [g for g in GENDERS if g in set(self.records["gender"].unique())]

    @property
    def years(self) -> np.ndarray:
        return np.unique(self.records["year"].to_numpy())

    @property
    def ages(self) -> np.ndarray:
        return np.unique(self.records["age"].to_numpy())

    @property
    def M(self) -> int:
        return len(self.countries)

    @property
    def year_range(self) -> tuple[int, int]:
        y = self.years
        return int(y[0]), int(y[-1])

    def __len__(self):
        return len(self.records)

    def subset(self, mask) -> "MortalityPanel":
        rec = self.records.loc[np.asarray(mask)].reset_index(drop=True)
        if rec.empty:
            raise EmptyPanelError("subset selects no records")
        return MortalityPanel(rec, self.omega, 0, ())

    def population(self, country: str, gender: str) -> "MortalityPanel":
        r = self.records
        return self.subset((r["country"] == country) & (r["gender"] == gender))

    def to_csv(self, path) -> None:
        self.records[PANEL_COLUMNS].to_csv(path, index=False, float_format="%.10g")


def _make_records(country, gender, age, year, rate) -> pd.DataFrame:
    rate = np.asarray(rate, dtype=float)
    age = np.asarray(age, dtype=np.int64)
    year = np.asarray(year, dtype=np.int64)
    return pd.DataFrame(
        {"country": np.asarray(country, dtype=object), "gender": np.asarray(gender, dtype=object),
         "age": age, "year": year, "rate": rate, "log_rate": np.log(rate), "cohort": year - age}
    )


def _finish(records: pd.DataFrame, omega: int, excluded: int, cells=()) -> MortalityPanel:
    if records.empty:
        raise EmptyPanelError("panel has no records with a positive rate")
    records = records.sort_values(["country", "gender", "age", "year"], ignore_index=True)
    if records.duplicated(["country", "gender", "age", "year"]).any():
        raise DuplicateKeyError("duplicate (country, gender, age, year) records")
    return MortalityPanel(records[PANEL_COLUMNS], int(omega), int(excluded), tuple(cells))


def build_panel(
    tables: Sequence[MortalityTable],
    year_range: tuple[int, int],
    age_range: tuple[int, int] = (0, DEFAULT_OMEGA),
    genders: Iterable[str] = GENDERS,
) -> MortalityPanel:
    """Restrict tables to the requested years/ages and stack them into a panel.

    Cells with a missing or zero rate are dropped and counted in ``excluded``.
    """
    y0, y1 = year_range
    a0, a1 = age_range
    genders = tuple(genders)
    frames, excluded_cells = [], []
    for table in tables:
        d = table.data
        d = d[(d["year"] >= y0) & (d["year"] <= y1) & (d["age"] >= a0) & (d["age"] <= a1)]
        expected = (y1 - y0 + 1) * (a1 - a0 + 1)
        if len(d) != expected:
            raise CoverageError(
                f"{table.country}: table covers {len(d)} of {expected} (year, age) cells "
                f"in {y0}-{y1} x {a0}-{a1}"
            )
        for g in genders:
            rate = d[g].to_numpy()
            ok = np.isfinite(rate) & (rate > 0)
            for yy, aa in zip(d["year"].to_numpy()[~ok], d["age"].to_numpy()[~ok]):
                excluded_cells.append((table.country, g, int(aa), int(yy)))
            frames.append(
                _make_records(table.country, g, d["age"].to_numpy()[ok], d["year"].to_numpy()[ok], rate[ok])
            )
    records = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PANEL_COLUMNS)
    return _finish(records, a1, len(excluded_cells), excluded_cells)


def load_panel(data_dir, countries, year_range, age_range=(0, DEFAULT_OMEGA), genders=GENDERS) -> MortalityPanel:
    tables = [read_hmd_file(find_hmd_file(data_dir, c), c) for c in countries]
    return build_panel(tables, year_range, age_range, genders)


def read_panel_csv(path, omega: int | None = None) -> MortalityPanel:
    rec = pd.read_csv(path, dtype={"country": object, "gender": object})
    rec = _make_records(rec["country"], rec["gender"], rec["age"], rec["year"], rec["rate"])
    return _finish(rec, omega if omega is not None else int(rec["age"].max()), 0)


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Generator for ``log m = a_x + b_x * k_t + noise``.

    ``a_x``, ``b_x`` and ``k_t`` are either one array shared by all
    populations or a mapping ``(country, gender) -> array``.
    """

    ages: Sequence[int]
    years: Sequence[int]
    a_x: object
    b_x: object
    k_t: object
    noise_scale: float = 0.0
    countries: Sequence[str] = ("SYN",)
    genders: Sequence[str] = GENDERS


def _pick(param, key, size, name):
    arr = param[key] if isinstance(param, Mapping) else param
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (size,):
        raise ValueError(f"{name} for {key} must have length {size}")
    return arr


def synth_panel(spec: SynthSpec, seed: int = 0) -> MortalityPanel:
    rng = np.random.default_rng(seed)
    ages = np.asarray(spec.ages, dtype=np.int64)
    years = np.asarray(spec.years, dtype=np.int64)
    frames = []
    for c in spec.countries:
        for g in spec.genders:
            key = (c, g)
            a = _pick(spec.a_x, key, len(ages), "a_x")
            b = _pick(spec.b_x, key, len(ages), "b_x")
            k = _pick(spec.k_t, key, len(years), "k_t")
            logm = a[:, None] + b[:, None] * k[None, :]
            if spec.noise_scale > 0:
                logm = logm + spec.noise_scale * rng.standard_normal(logm.shape)
            aa, yy = np.meshgrid(ages, years, indexing="ij")
            rec = _make_records(np.full(aa.size, c, dtype=object), np.full(aa.size, g, dtype=object),
                                aa.ravel(), yy.ravel(), np.exp(logm.ravel()))
            rec["log_rate"] = logm.ravel()
            frames.append(rec)
    return _finish(pd.concat(frames, ignore_index=True), int(ages.max()), 0)


def demo_synth_spec(countries=("AAA", "BBB"), years=range(1961, 2020), omega=DEFAULT_OMEGA,
                    noise_scale=0.03) -> SynthSpec:
    """A Lee-Carter-shaped generator with roughly human age patterns.

    Countries and genders get distinct levels and improvement speeds so
    multi-population models have something to separate.
    """
    ages = np.arange(omega + 1)
    years = np.asarray(list(years))
    base = np.log(0.00022 + 0.00003 * np.exp(0.095 * ages) + 0.012 * np.exp(-1.2 * ages)
                  + 0.0008 * np.exp(-0.5 * ((ages - 22) / 5.0) ** 2))
    a, b, k = {}, {}, {}
    t = (years - years.mean()) / (years.max() - years.min())
    for i, c in enumerate(countries):
        for j, g in enumerate(GENDERS):
            a[(c, g)] = base + 0.25 * i + 0.35 * j - 0.002 * j * ages
            bx = 1.2 - 0.8 * ages / max(omega, 1) + 0.3 * np.exp(-ages / 5.0)
            b[(c, g)] = bx / bx.mean()
            k[(c, g)] = -(0.9 + 0.15 * i - 0.1 * j) * t * 1.1 - 0.05 * np.sin(6 * t + i)
    return SynthSpec(ages, years, a, b, k, noise_scale, tuple(countries), GENDERS)


def write_hmd_file(panel: MortalityPanel, country: str, path) -> None:
    """Write one country of a panel back out in HMD ``Mx_1x1`` layout."""
    rec = panel.records[panel.records["country"] == country]
    wide = rec.pivot_table(index=["year", "age"], columns="gender", values="rate", aggfunc="first")
    lines = [f"{country}, Death rates (period 1x1), synthetic", "",
             "  Year          Age             Female            Male           Total"]
    for (year, age), row in wide.iterrows():
        vals = [row.get(g, np.nan) for g in GENDERS]
        fmt = ["." if not np.isfinite(v) else f"{v:.10g}" for v in vals]
        present = [v for v in vals if np.isfinite(v)]
        total = f"{np.mean(present):.6f}" if present else "."
        lines.append(f"  {year}  {age:>11}  {fmt[0]:>17}  {fmt[1]:>14}  {total:>14}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_data_dir() -> Path | None:
    value = os.environ.get("GAMMORT_HMD_DIR")
    return Path(value) if value else None
