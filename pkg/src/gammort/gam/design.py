"""Model specifications and assembly of the sparse penalized design."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..errors import CodingError, SpecError
from .terms import (BySmoothTerm, CenteredSmoothTerm, FactorSmoothTerm, FactorTerm, InterceptTerm,
                    RandomEffectTerm, Term)

SMOOTH_KINDS = ("centered_shrinkage_1d", "by_shrinkage_1d", "re", "fs")


@dataclass(frozen=True)
class SmoothTerm:
    kind: str
    covariate: str | None = None
    factors: tuple = ()
    k: int = 10
    m: int = 2
    eps: float = 0.1

    def __post_init__(self):
        if self.kind not in SMOOTH_KINDS:
            raise SpecError(f"unknown smooth kind {self.kind!r}")
        if self.kind != "re" and not self.covariate:
            raise SpecError(f"{self.kind} smooth needs a covariate")
        if self.kind in ("by_shrinkage_1d", "re", "fs") and not self.factors:
            raise SpecError(f"{self.kind} smooth needs grouping factors")

    @property
    def label(self) -> str:
        f = ":".join(self.factors)
        if self.kind == "centered_shrinkage_1d":
            return f"s({self.covariate},bs=ts)"
        if self.kind == "by_shrinkage_1d":
            return f"s({self.covariate},by={f},bs=ts)"
        if self.kind == "re":
            return f"s({f},bs=re)"
        return f"s({self.covariate},{f},bs=fs,m={self.m})"

    def make_term(self) -> Term:
        if self.kind == "centered_shrinkage_1d":
            return CenteredSmoothTerm(self.covariate, self.k, self.eps, self.label)
        if self.kind == "by_shrinkage_1d":
            return BySmoothTerm(self.covariate, self.factors, self.k, self.eps, self.label)
        if self.kind == "re":
            return RandomEffectTerm(self.factors, self.label)
        return FactorSmoothTerm(self.covariate, self.factors, self.k, self.m, self.label)


@dataclass(frozen=True)
class ModelSpec:
    parametric: tuple = (("age",), ("gender", "age"))
    smooths: tuple = ()
    intercept: bool = True
    response: str = "log_rate"

    def __post_init__(self):
        labels = self.term_labels
        if len(set(labels)) != len(labels):
            raise SpecError(f"duplicate term names in {labels}")

    @property
    def term_labels(self) -> list[str]:
        return [":".join(p) for p in self.parametric] + [s.label for s in self.smooths]

    def to_dict(self) -> dict:
        return {"parametric": [list(p) for p in self.parametric],
                "smooths": [dict(asdict(s), factors=list(s.factors)) for s in self.smooths],
                "intercept": self.intercept, "response": self.response}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        smooths = tuple(SmoothTerm(**dict(s, factors=tuple(s["factors"]))) for s in d["smooths"])
        return cls(tuple(tuple(p) for p in d["parametric"]), smooths, d["intercept"], d["response"])


def multi_population_spec(k: int = 10, k_fs: int = 5, eps: float = 0.1) -> ModelSpec:
    """Multi-population GAMM: age + gender:age intercepts, smooths in kct and
    cohort, a random intercept and factor smooths in kt and cohort per
    country:gender:age cell."""
    cga = ("country", "gender", "age")
    return ModelSpec(
        parametric=(("age",), ("gender", "age")),
        smooths=(
            SmoothTerm("centered_shrinkage_1d", "kct", (), k, 2, eps),
            SmoothTerm("by_shrinkage_1d", "kct", ("gender", "age"), k, 2, eps),
            SmoothTerm("centered_shrinkage_1d", "cohort", (), k, 2, eps),
            SmoothTerm("re", None, cga),
            SmoothTerm("fs", "kt", cga, k_fs, 1),
            SmoothTerm("fs", "cohort", cga, k_fs, 1),
        ),
    )


def single_population_spec(k_fs: int = 5) -> ModelSpec:
    """Single-population GAMM: age intercepts plus a factor smooth in kt per age."""
    return ModelSpec(parametric=(("age",),), smooths=(SmoothTerm("fs", "kt", ("age",), k_fs, 1),))


@dataclass
class Penalty:
    cols: np.ndarray
    matrix: sp.csr_matrix
    lam_index: int
    term: str
    scale: float = 1.0


@dataclass
class Design:
    """Sparse penalized least-squares problem.

    ``border`` flags columns shared by all observations (intercept, global
    smooths); the solver eliminates the remaining columns block by block.
    """

    X: sp.csr_matrix
    y: np.ndarray
    penalties: list = field(default_factory=list)
    column_map: dict = field(default_factory=dict)
    border: np.ndarray | None = None
    lambda_labels: list = field(default_factory=list)
    terms: list = field(default_factory=list)

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X)
        self.y = np.asarray(self.y, dtype=float)
        if self.border is None:
            self.border = np.zeros(self.X.shape[1], dtype=bool)
        if not self.lambda_labels:
            n_lam = 1 + max((pen.lam_index for pen in self.penalties), default=-1)
            self.lambda_labels = [f"lambda{j}" for j in range(n_lam)]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_lambda(self) -> int:
        return len(self.lambda_labels)

    def term_of_column(self) -> np.ndarray:
        out = np.empty(self.p, dtype=object)
        out[:] = "?"
        for name, (a, b) in self.column_map.items():
            out[a:b] = name
        return out

    def total_penalty(self, lam) -> sp.csr_matrix:
        lam = np.asarray(lam, dtype=float)
        S = sp.csr_matrix((self.p, self.p))
        for pen in self.penalties:
            E = sp.csr_matrix((np.ones(pen.cols.size), (pen.cols, np.arange(pen.cols.size))),
                             shape=(self.p, pen.cols.size))
            S = S + lam[pen.lam_index] * (E @ pen.matrix @ E.T)
        return S.tocsr()

    def subset_rows(self, keep) -> "Design":
        keep = np.asarray(keep)
        return Design(self.X[keep], self.y[keep], self.penalties, self.column_map, self.border,
                      self.lambda_labels, self.terms)

    @classmethod
    def from_dense(cls, X, y, penalties=(), border=None) -> "Design":
        """Convenience constructor: ``penalties`` is a list of (cols, matrix)."""
        pens = [Penalty(np.asarray(c, dtype=np.int64), sp.csr_matrix(np.atleast_2d(S)), j, f"pen{j}")
                for j, (c, S) in enumerate(penalties)]
        X = sp.csr_matrix(np.atleast_2d(np.asarray(X, dtype=float)))
        return cls(X, y, pens, {"X": (0, X.shape[1])}, border)


def _inf_norm(M) -> float:
    return float(abs(M).sum(axis=1).max()) if M.shape[0] else 0.0


def _check_parametric_rank(X_par: sp.csr_matrix, labels):
    if X_par.shape[1] == 0:
        return
    G = (X_par.T @ X_par).toarray()
    w, V = np.linalg.eigh(G)
    tol = 1e-10 * max(w.max(), 1.0)
    if (w <= tol).any():
        j = int(np.argmax(np.abs(V[:, int(np.argmin(w))])))
        raise CodingError(f"parametric block is rank deficient (column {labels[j]!r} is aliased)")


def build_terms(spec: ModelSpec) -> list[Term]:
    terms: list[Term] = []
    if spec.intercept:
        terms.append(InterceptTerm())
    seen = set()
    for p in spec.parametric:
        p = tuple(p)
        if len(p) > 1 and p[1:] not in seen:
            raise SpecError(f"interaction {':'.join(p)} needs a main effect for {':'.join(p[1:])}")
        seen.add(p)
        terms.append(FactorTerm(p))
    terms.extend(s.make_term() for s in spec.smooths)
    return terms


def assemble_design(frame: pd.DataFrame, spec: ModelSpec, template: list | None = None,
                    normalize: bool = True) -> Design:
    """Translate ``spec`` into a sparse design on ``frame``.

    ``template`` (terms of an earlier fit) fixes knots and factor levels, as
    used when refitting on a row subset.
    """
    if len(frame) == 0:
        raise SpecError("empty frame")
    if spec.response not in frame.columns:
        raise SpecError(f"frame lacks response column {spec.response!r}")
    terms = build_terms(spec)
    blocks, penalties, column_map, border, lam_labels = [], [], {}, [], []
    start = 0
    for i, term in enumerate(terms):
        tmpl = template[i] if template is not None else None
        block, pens = term.build(frame, tmpl)
        block = sp.csr_matrix(block)
        width = block.shape[1]
        column_map[term.label] = (start, start + width)
        border.append(np.full(width, term.border))
        xnorm = _inf_norm(block)
        for j, S in enumerate(pens):
            S = sp.csr_matrix(S)
            scale = 1.0
            if normalize:
                snorm = _inf_norm(S)
                if snorm > 0 and xnorm > 0:
                    scale = xnorm ** 2 / snorm
            suffix = "" if len(pens) == 1 else f"[{j}]"
            lam_labels.append(term.label + suffix)
            penalties.append(Penalty(np.arange(start, start + width), (S * scale).tocsr(),
                                     len(lam_labels) - 1, term.label, scale))
        blocks.append(block)
        start += width
    X = sp.hstack(blocks, format="csr")
    par_cols = [c for t in terms if t.kind in ("intercept", "factor")
                for c in range(*column_map[t.label])]
    par_labels = [t.label for t in terms if t.kind in ("intercept", "factor")
                  for _ in range(*column_map[t.label])]
    if template is None:
        _check_parametric_rank(X[:, par_cols], par_labels)
        empty = np.flatnonzero(np.diff(X.tocsc().indptr) == 0)
        if empty.size:
            raise SpecError(f"design has {empty.size} all-zero columns")
    y = frame[spec.response].to_numpy(dtype=float)
    return Design(X, y, penalties, column_map, np.concatenate(border), lam_labels, terms)


def design_rows(terms: list[Term], frame: pd.DataFrame) -> sp.csr_matrix:
    """Design rows for new data using the stored term structure."""
    return sp.hstack([sp.csr_matrix(t.design(frame)) for t in terms], format="csr")
