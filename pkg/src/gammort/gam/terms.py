"""Model terms: each knows how to build its design block and penalties from a
training frame, and how to rebuild design rows for new data."""
from __future__ import annotations

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .. import basis
from ..errors import LevelError, SpecError


def combined_codes(frame: pd.DataFrame, factors, levels=None):
    """Codes of the interaction of ``factors``; levels are sorted tuples."""
    missing = [f for f in factors if f not in frame.columns]
    if missing:
        raise SpecError(f"frame lacks factor column(s) {missing}")
    mi = pd.MultiIndex.from_arrays([frame[f].to_numpy() for f in factors])
    if levels is None:
        levels = sorted(set(mi.tolist()))
    levels = [tuple(lv) for lv in levels]
    codes = pd.MultiIndex.from_tuples(levels).get_indexer(mi)
    if (codes < 0).any():
        bad = mi[int(np.flatnonzero(codes < 0)[0])]
        raise LevelError(f"unseen level {bad!r} of {':'.join(factors)}")
    return codes.astype(np.int64), levels


def _covariate(frame, name):
    if name not in frame.columns:
        raise SpecError(f"frame lacks covariate column {name!r}")
    x = frame[name].to_numpy(dtype=float)
    if not np.isfinite(x).all():
        raise SpecError(f"covariate {name!r} has non-finite values")
    return x


def _jsonable_levels(levels):
    return [[v.item() if hasattr(v, "item") else v for v in lv] for lv in levels]


class Term:
    kind = ""
    border = False
    label = ""
    boundary = None

    def build(self, frame, template=None):
        """Learn the term's structure from ``frame``; return (block, penalties)."""
        raise NotImplementedError

    def design(self, frame):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class InterceptTerm(Term):
    kind = "intercept"
    border = True
    label = "(Intercept)"
    n_columns = 1

    def build(self, frame, template=None):
        return self.design(frame), []

    def design(self, frame):
        return sp.csr_matrix(np.ones((len(frame), 1)))

    def to_dict(self):
        return {"kind": self.kind, "label": self.label}


class FactorTerm(Term):
    """Treatment-coded parametric factor term.

    A single factor contributes its non-reference levels. For an interaction
    ``a:b`` the columns are the non-reference levels of ``a`` within every
    level of ``b`` (the coding used when ``b`` already has a main effect).
    """

    kind = "factor"

    def __init__(self, factors, levels=None):
        self.factors = tuple(factors)
        self.label = ":".join(self.factors)
        self.levels = levels

    def _columns(self):
        first = sorted({lv[0] for lv in self.levels})
        ref = first[0]
        return [lv for lv in self.levels if lv[0] != ref]

    @property
    def n_columns(self):
        return len(self._columns())

    def build(self, frame, template=None):
        if template is not None:
            self.levels = template.levels
        else:
            _, self.levels = combined_codes(frame, self.factors)
            if len(self.factors) > 1:
                # keep every level of the trailing factors even if a combination is absent
                rest = sorted({lv[1:] for lv in self.levels})
                heads = sorted({lv[0] for lv in self.levels})
                self.levels = [(h,) + r for r in rest for h in heads]
                self.levels.sort()
        return self.design(frame), []

    def design(self, frame):
        codes, _ = combined_codes(frame, self.factors, self.levels)
        cols = self._columns()
        pos = {lv: j for j, lv in enumerate(cols)}
        colmap = np.array([pos.get(lv, -1) for lv in self.levels], dtype=np.int64)
        c = colmap[codes]
        keep = c >= 0
        n = len(frame)
        return sp.csr_matrix((np.ones(keep.sum()), (np.flatnonzero(keep), c[keep])), shape=(n, len(cols)))

    def to_dict(self):
        return {"kind": self.kind, "label": self.label, "factors": list(self.factors),
                "levels": _jsonable_levels(self.levels)}


class CenteredSmoothTerm(Term):
    """1-D shrinkage smooth with a sum-to-zero constraint."""

    kind = "centered_shrinkage_1d"
    border = True

    def __init__(self, covariate, k=10, eps=0.1, label=None):
        self.covariate = covariate
        self.k = int(k)
        self.eps = float(eps)
        self.label = label or f"s({covariate},bs=ts)"
        self.knots = None
        self.colsum = None

    @property
    def n_columns(self):
        return self.k - 1

    def build(self, frame, template=None):
        x = _covariate(frame, self.covariate)
        knots = template.knots if template is not None else None
        block = basis.shrinkage_modify(basis.crs_basis(x, self.k, knots), self.eps)
        self.knots = block.knots
        self.boundary = tuple(template.boundary) if template is not None else block.boundary
        self.colsum = block.columns.sum(axis=0)
        block = basis.center_constraint(block)
        return sp.csr_matrix(block.columns), [block.penalties[0]]

    def design(self, frame):
        x = _covariate(frame, self.covariate)
        Z = basis.sum_to_zero_basis(self.colsum)
        return sp.csr_matrix(basis.crs_evaluate(x, self.knots) @ Z)

    def to_dict(self):
        return {"kind": self.kind, "label": self.label, "covariate": self.covariate, "k": self.k,
                "eps": self.eps, "knots": self.knots.tolist(), "colsum": self.colsum.tolist(),
                "boundary": list(self.boundary)}


class BySmoothTerm(Term):
    """Shrinkage smooth replicated per level of a factor, one smoothing
    parameter per level, each level's curve centered over its own rows."""

    kind = "by_shrinkage_1d"

    def __init__(self, covariate, factors, k=10, eps=0.1, label=None):
        self.covariate = covariate
        self.factors = tuple(factors)
        self.k = int(k)
        self.eps = float(eps)
        self.label = label or f"s({covariate},by={':'.join(self.factors)},bs=ts)"
        self.knots = None
        self.levels = None
        self.colsums = None

    @property
    def n_columns(self):
        return len(self.levels) * (self.k - 1)

    def build(self, frame, template=None):
        x = _covariate(frame, self.covariate)
        if template is not None:
            knots, levels = template.knots, template.levels
            self.boundary = tuple(template.boundary)
        else:
            knots, levels = None, None
        codes, self.levels = combined_codes(frame, self.factors, levels)
        block = basis.shrinkage_modify(basis.crs_basis(x, self.k, knots), self.eps)
        if template is None:
            self.boundary = block.boundary
        self.knots = block.knots
        L = len(self.levels)
        self.colsums = np.zeros((L, self.k))
        np.add.at(self.colsums, codes, block.columns)
        out = basis.by_interaction(block, codes, levels=tuple(range(L)), center=True)
        return out.columns.tocsr(), out.penalties

    def _transforms(self):
        return np.stack([basis.sum_to_zero_basis(c) for c in self.colsums])

    def design(self, frame):
        x = _covariate(frame, self.covariate)
        codes, _ = combined_codes(frame, self.factors, self.levels)
        X = basis.crs_evaluate(x, self.knots)
        Zs = self._transforms()
        Xl = np.einsum("np,npq->nq", X, Zs[codes])
        return basis._replicate(Xl, codes, len(self.levels))

    def to_dict(self):
        return {"kind": self.kind, "label": self.label, "covariate": self.covariate,
                "factors": list(self.factors), "k": self.k, "eps": self.eps,
                "knots": self.knots.tolist(), "levels": _jsonable_levels(self.levels),
                "colsums": self.colsums.tolist(), "boundary": list(self.boundary)}


class RandomEffectTerm(Term):
    kind = "re"

    def __init__(self, factors, label=None):
        self.factors = tuple(factors)
        self.label = label or f"s({':'.join(self.factors)},bs=re)"
        self.levels = None

    @property
    def n_columns(self):
        return len(self.levels)

    def build(self, frame, template=None):
        codes, self.levels = combined_codes(frame, self.factors, template.levels if template else None)
        block = basis.re_basis(codes, levels=tuple(range(len(self.levels))))
        return block.columns, block.penalties

    def design(self, frame):
        codes, _ = combined_codes(frame, self.factors, self.levels)
        n = len(frame)
        return sp.csr_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, len(self.levels)))

    def to_dict(self):
        return {"kind": self.kind, "label": self.label, "factors": list(self.factors),
                "levels": _jsonable_levels(self.levels)}


class FactorSmoothTerm(Term):
    kind = "fs"

    def __init__(self, covariate, factors, k=5, m=1, label=None):
        self.covariate = covariate
        self.factors = tuple(factors)
        self.k = int(k)
        self.m = int(m)
        self.label = label or f"s({covariate},{':'.join(self.factors)},bs=fs,m={self.m})"
        self.knots = None
        self.levels = None

    @property
    def n_columns(self):
        return len(self.levels) * self.k

    def build(self, frame, template=None):
        x = _covariate(frame, self.covariate)
        codes, self.levels = combined_codes(frame, self.factors, template.levels if template else None)
        L = len(self.levels)
        if template is None:
            block = basis.fs_basis(x, codes, self.k, self.m, levels=tuple(range(L)))
            self.boundary = block.boundary
            self.knots = block.knots
            return block.columns, block.penalties
        # refit on a row subset: structure fixed, levels may have lost rows
        self.knots = template.knots
        self.boundary = tuple(template.boundary)
        P, R = basis.fs_penalties(self.knots, self.m)
        eye = sp.identity(L, format="csr")
        pens = [sp.kron(eye, sp.csr_matrix(P), format="csr"), sp.kron(eye, sp.csr_matrix(R), format="csr")]
        return self.design(frame), pens

    def design(self, frame):
        x = _covariate(frame, self.covariate)
        codes, _ = combined_codes(frame, self.factors, self.levels)
        return basis._replicate(basis.crs_evaluate(x, self.knots), codes, len(self.levels))

    def to_dict(self):
        return {"kind": self.kind, "label": self.label, "covariate": self.covariate,
                "factors": list(self.factors), "k": self.k, "m": self.m, "knots": self.knots.tolist(),
                "levels": _jsonable_levels(self.levels), "boundary": list(self.boundary)}


def term_from_dict(d: dict) -> Term:
    kind = d["kind"]
    if kind == "intercept":
        return InterceptTerm()
    if kind == "factor":
        t = FactorTerm(d["factors"], [tuple(lv) for lv in d["levels"]])
        return t
    if kind == "centered_shrinkage_1d":
        t = CenteredSmoothTerm(d["covariate"], d["k"], d["eps"], d["label"])
        t.knots = np.asarray(d["knots"], dtype=float)
        t.colsum = np.asarray(d["colsum"], dtype=float)
    elif kind == "by_shrinkage_1d":
        t = BySmoothTerm(d["covariate"], d["factors"], d["k"], d["eps"], d["label"])
        t.knots = np.asarray(d["knots"], dtype=float)
        t.levels = [tuple(lv) for lv in d["levels"]]
        t.colsums = np.asarray(d["colsums"], dtype=float)
    elif kind == "re":
        t = RandomEffectTerm(d["factors"], d["label"])
        t.levels = [tuple(lv) for lv in d["levels"]]
        return t
    elif kind == "fs":
        t = FactorSmoothTerm(d["covariate"], d["factors"], d["k"], d["m"], d["label"])
        t.knots = np.asarray(d["knots"], dtype=float)
        t.levels = [tuple(lv) for lv in d["levels"]]
    else:
        raise SpecError(f"unknown term kind {kind!r}")
    t.boundary = tuple(d["boundary"])
    return t
