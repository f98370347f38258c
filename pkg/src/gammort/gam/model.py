"""Fitted GAMMs: REML fitting, trim-and-refit, prediction and JSON storage."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import ExcessiveTrimError, VersionError
from .design import Design, ModelSpec, assemble_design, design_rows
from .reml import RHO_BOUNDS, RemlProblem, minimize_reml
from .terms import term_from_dict

SCHEMA = "gammort.model/1"


@dataclass(frozen=True)
class FittedModel:
    spec: ModelSpec | None
    terms: list
    column_map: dict
    beta: np.ndarray
    rho: np.ndarray
    lambda_labels: list
    sigma2: float
    edf: dict
    n: int
    rss: float
    reml_score: float
    iterations: int = 0
    grad_norm: float = 0.0
    boundaries: dict = field(default_factory=dict)
    trim: dict | None = None

    @property
    def edf_total(self) -> float:
        return float(sum(self.edf.values()))

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.rho)

    @property
    def term_labels(self) -> list[str]:
        return [t.label for t in self.terms]

    @property
    def retained_fraction(self) -> float:
        return 1.0 if self.trim is None else self.trim["retained_fraction"]

    def predict(self, frame: pd.DataFrame) -> np.ndarray:
        """Linear predictor for ``frame`` using the training knots and levels;
        smooths continue linearly outside their training range."""
        if not self.terms:
            raise ValueError("model has no term structure to build design rows from")
        return np.asarray(design_rows(self.terms, frame) @ self.beta).ravel()

    def residuals(self, frame: pd.DataFrame) -> np.ndarray:
        return frame[self.spec.response].to_numpy(dtype=float) - self.predict(frame)

    def term_contributions(self, frame: pd.DataFrame) -> pd.DataFrame:
        """Per-term additive contributions to the linear predictor."""
        out = {}
        for t in self.terms:
            a, b = self.column_map[t.label]
            out[t.label] = np.asarray(t.design(frame) @ self.beta[a:b]).ravel()
        return pd.DataFrame(out, index=frame.index)

    def edf_table(self) -> pd.DataFrame:
        rows = []
        for t in self.terms:
            a, b = self.column_map[t.label]
            lam = {lab: float(np.exp(r)) for lab, r in zip(self.lambda_labels, self.rho)
                   if lab == t.label or lab.startswith(t.label + "[")}
            rows.append({"term": t.label, "columns": b - a, "edf": self.edf[t.label],
                         "n_lambda": len(lam)})
        return pd.DataFrame(rows)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "spec": None if self.spec is None else self.spec.to_dict(),
            "terms": [t.to_dict() for t in self.terms],
            "column_map": {k: list(v) for k, v in self.column_map.items()},
            "beta": self.beta.tolist(),
            "rho": self.rho.tolist(),
            "lambda_labels": list(self.lambda_labels),
            "sigma2": self.sigma2,
            "edf": dict(self.edf),
            "n": self.n,
            "rss": self.rss,
            "reml_score": self.reml_score,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "boundaries": {k: list(v) for k, v in self.boundaries.items()},
            "trim": self.trim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if d.get("schema") != SCHEMA:
            raise VersionError(f"model schema {d.get('schema')!r} is not {SCHEMA!r}")
        return cls(
            spec=None if d["spec"] is None else ModelSpec.from_dict(d["spec"]),
            terms=[term_from_dict(t) for t in d["terms"]],
            column_map={k: tuple(v) for k, v in d["column_map"].items()},
            beta=np.asarray(d["beta"], dtype=float),
            rho=np.asarray(d["rho"], dtype=float),
            lambda_labels=list(d["lambda_labels"]),
            sigma2=float(d["sigma2"]),
            edf={k: float(v) for k, v in d["edf"].items()},
            n=int(d["n"]),
            rss=float(d["rss"]),
            reml_score=float(d["reml_score"]),
            iterations=int(d["iterations"]),
            grad_norm=float(d["grad_norm"]),
            boundaries={k: tuple(v) for k, v in d["boundaries"].items()},
            trim=d["trim"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FittedModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def optimize_reml(design: Design, rho0=None, spec: ModelSpec | None = None, bounds=RHO_BOUNDS,
                  max_iter: int = 200, gtol: float = 1e-3) -> FittedModel:
    """Select smoothing parameters by REML and return the fit at the optimum.

    ``sigma2 = rss / (n - sum(edf))``; a term's edf is the trace of its
    block of ``A^{-1} X'X``.
    """
    problem = RemlProblem(design)
    result = minimize_reml(problem, rho0, bounds=bounds, max_iter=max_iter, gtol=gtol)
    ev = result.final
    col_edf = problem.column_edf(ev.factor)
    edf = {label: float(col_edf[a:b].sum()) for label, (a, b) in design.column_map.items()}
    resid_df = design.n - col_edf.sum()
    sigma2 = ev.rss / resid_df if resid_df > 0 else float("nan")
    boundaries = {t.label: tuple(float(v) for v in t.boundary) for t in design.terms
                  if t.boundary is not None}
    return FittedModel(spec, list(design.terms), dict(design.column_map), ev.beta, ev.rho,
                       list(design.lambda_labels), float(sigma2), edf, design.n, ev.rss, ev.score,
                       result.iterations, result.grad_norm, boundaries)


def fit_gam(frame: pd.DataFrame, spec: ModelSpec, rho0=None, **options) -> FittedModel:
    design = assemble_design(frame, spec)
    return optimize_reml(design, rho0, spec=spec, **options)


def trim_mask(model: FittedModel, frame: pd.DataFrame, threshold: float = 0.1) -> np.ndarray:
    """Rows whose absolute residual is at most ``threshold``."""
    return np.abs(model.residuals(frame)) <= threshold


def trim_refit(model: FittedModel, frame: pd.DataFrame, threshold: float = 0.1,
               min_retained: float = 0.5, **options) -> FittedModel:
    """Drop rows with absolute residual above ``threshold`` and refit once.

    Knots and factor levels stay those of ``model``; smoothing parameters are
    re-optimized, starting from the current ones. Covariates are not
    recomputed.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    keep = trim_mask(model, frame, threshold)
    retained = float(keep.mean())
    if retained < min_retained:
        raise ExcessiveTrimError(f"trimming at {threshold} keeps only {retained:.1%} of the rows")
    design = assemble_design(frame.loc[keep], model.spec, template=model.terms)
    refit = optimize_reml(design, model.rho, spec=model.spec, **options)
    trim = {"threshold": float(threshold), "retained_fraction": retained,
            "n_before": int(keep.size), "n_after": int(keep.sum())}
    return replace(refit, trim=trim)
