"""Train/test splits, mean squared errors and model comparison tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import AlignmentError, JoinError, SplitError
from .ingest import MortalityPanel

KEYS = ["country", "gender", "age", "year"]
SCALES = ("rate", "log")
GENDER_ABBR = {"female": "F", "male": "M"}


def split(panel: MortalityPanel, cutoff: int) -> tuple[MortalityPanel, MortalityPanel]:
    """Training years ``<= cutoff`` and test years ``> cutoff``."""
    y0, y1 = panel.year_range
    if not y0 <= cutoff < y1:
        raise SplitError(f"cutoff {cutoff} leaves an empty side of {y0}-{y1}")
    years = panel.records["year"].to_numpy()
    return panel.subset(years <= cutoff), panel.subset(years > cutoff)


def mse(actual, predicted, scale: str = "log") -> float:
    """Mean squared difference of log rates, or of rates when ``scale="rate"``.

    Indexed inputs (pandas Series) must carry the same keys; they are
    aligned before differencing.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}")
    if isinstance(actual, pd.Series) and isinstance(predicted, pd.Series):
        if len(actual) != len(predicted) or not actual.index.sort_values().equals(predicted.index.sort_values()):
            raise AlignmentError("actual and predicted values have different keys")
        predicted = predicted.reindex(actual.index)
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise AlignmentError(f"length mismatch: {a.shape} vs {p.shape}")
    if scale == "rate":
        a, p = np.exp(a), np.exp(p)
    return float(np.mean((a - p) ** 2))


def _aligned(actual: pd.DataFrame, predicted: pd.DataFrame) -> pd.DataFrame:
    """Inner join on the actual cells; every actual cell must be predicted."""
    pred = predicted[KEYS + ["log_rate_hat"]]
    if pred.duplicated(KEYS).any():
        raise AlignmentError("duplicate keys in predictions")
    merged = actual[KEYS + ["log_rate"]].merge(pred, on=KEYS, how="left")
    missing = merged["log_rate_hat"].isna()
    if missing.any():
        row = merged.loc[missing, KEYS].iloc[0].tolist()
        raise AlignmentError(f"{int(missing.sum())} cells lack predictions, e.g. {row}")
    return merged


def population_mse(actual: pd.DataFrame, predicted: pd.DataFrame) -> pd.DataFrame:
    """Per (country, gender) MSE on both scales over the cells of ``actual``."""
    m = _aligned(actual, predicted)
    m["sq_log"] = (m["log_rate"] - m["log_rate_hat"]) ** 2
    m["sq_rate"] = (np.exp(m["log_rate"]) - np.exp(m["log_rate_hat"])) ** 2
    g = m.groupby(["country", "gender"], sort=True)
    out = pd.DataFrame({"log": g["sq_log"].mean(), "rate": g["sq_rate"].mean(), "n": g.size()}).reset_index()
    return out


def model_rows(model: str, train_actual, train_pred, test_actual, test_pred) -> pd.DataFrame:
    """Long rows (country, gender, model, scale, train_mse, test_mse)."""
    tr = population_mse(train_actual, train_pred)
    te = population_mse(test_actual, test_pred)
    j = tr.merge(te, on=["country", "gender"], suffixes=("_train", "_test"), how="outer")
    if j.isna().any().any():
        raise JoinError(f"{model}: train and test cover different populations")
    rows = []
    for _, r in j.iterrows():
        for scale in SCALES:
            rows.append({"country": r["country"], "gender": r["gender"], "model": model, "scale": scale,
                         "train_mse": r[f"{scale}_train"], "test_mse": r[f"{scale}_test"]})
    return pd.DataFrame(rows)


@dataclass
class EvalReport:
    rows: pd.DataFrame
    ratios: pd.DataFrame

    def populations(self) -> list[tuple[str, str]]:
        pops = self.rows[["country", "gender"]].drop_duplicates()
        return sorted(map(tuple, pops.to_numpy().tolist()))

    def ratio(self, country: str, gender: str, scale: str = "rate") -> float:
        r = self.ratios
        sel = (r["country"] == country) & (r["gender"] == gender) & (r["scale"] == scale)
        return float(r.loc[sel, "ratio"].iloc[0])

    def to_csv(self, path, ratio_path=None) -> None:
        self.rows.to_csv(path, index=False, float_format="%.10g")
        if ratio_path is not None:
            self.ratios.to_csv(ratio_path, index=False, float_format="%.10g")

    def to_text(self, scale: str = "rate") -> str:
        """Populations as columns, one row per model and set, then the ratio row."""
        pops = self.populations()
        header = ["", *[f"{c}-{GENDER_ABBR.get(g, g)}" for c, g in pops]]
        lines = []
        rows = self.rows[self.rows["scale"] == scale]
        for model in rows["model"].drop_duplicates():
            for col, label in (("train_mse", "train set"), ("test_mse", "test set")):
                cells = [f"{model} {label}"]
                for c, g in pops:
                    v = rows.loc[(rows["model"] == model) & (rows["country"] == c) & (rows["gender"] == g), col]
                    cells.append(f"{v.iloc[0]:.3e}" if len(v) else "-")
                lines.append(cells)
        rat = self.ratios[self.ratios["scale"] == scale]
        for base in rat["baseline"].drop_duplicates():
            cells = [f"{base} test set/{rat['reference'].iloc[0]} test set"]
            for c, g in pops:
                v = rat.loc[(rat["baseline"] == base) & (rat["country"] == c) & (rat["gender"] == g), "ratio"]
                cells.append(f"{v.iloc[0]:.3f}" if len(v) else "-")
            lines.append(cells)
        table = [header] + lines
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        text = [f"MSE ({scale} scale)"]
        for r in table:
            text.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))))
        return "\n".join(text) + "\n"


def compare(reports, reference: str = "GAMM") -> EvalReport:
    """Stack per-model rows and add ``baseline test MSE / reference test MSE``
    for every other model, population and scale."""
    rows = pd.concat(list(reports), ignore_index=True)
    if rows.duplicated(["country", "gender", "model", "scale"]).any():
        raise JoinError("duplicate (population, model, scale) rows")
    pops_by_model = {m: set(map(tuple, d[["country", "gender"]].to_numpy().tolist()))
                     for m, d in rows.groupby("model")}
    first = next(iter(pops_by_model.values()))
    for m, pops in pops_by_model.items():
        if pops != first:
            raise JoinError(f"model {m} covers different populations")
    ratios = []
    if reference in pops_by_model:
        ref = rows[rows["model"] == reference].set_index(["country", "gender", "scale"])["test_mse"]
        for m in pops_by_model:
            if m == reference:
                continue
            base = rows[rows["model"] == m].set_index(["country", "gender", "scale"])["test_mse"]
            for key, v in base.items():
                ratios.append({"country": key[0], "gender": key[1], "scale": key[2], "baseline": m,
                               "reference": reference, "ratio": v / ref[key]})
    cols = ["country", "gender", "scale", "baseline", "reference", "ratio"]
    order = (rows["model"] != reference).astype(int)
    rows = rows.assign(_order=order).sort_values(["_order", "model", "country", "gender", "scale"])
    return EvalReport(rows.drop(columns="_order").reset_index(drop=True), pd.DataFrame(ratios, columns=cols))
