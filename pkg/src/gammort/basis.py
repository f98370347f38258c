"""Cubic regression spline bases, shrinkage and centering transforms, and the
random-effect / factor-smooth / by-factor block constructions.

The cubic regression spline is parametrized by its values at the knots; the
second derivatives at the knots follow from the natural boundary conditions
(zero curvature at both end knots), so outside the knot range the function
continues along its tangent line.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DegenerateFactorError, DegenerateLevelError, LevelError, RankError

# Gauss-Legendre nodes on [0, 1]; three points integrate degree-5 polynomials exactly.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
_GL_NODES = (_GL_NODES + 1.0) / 2.0
_GL_WEIGHTS = _GL_WEIGHTS / 2.0


@dataclass(frozen=True)
class SmoothBlock:
    """Design columns of one smooth plus its penalties.

    ``constraint`` is the ``p_raw x p`` matrix mapping reduced coefficients to
    raw ones when a centering constraint has been absorbed.
    """

    columns: object
    penalties: list
    knots: np.ndarray = field(default_factory=lambda: np.empty(0))
    boundary: tuple = (np.nan, np.nan)
    constraint: np.ndarray | None = None
    levels: tuple = ()

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]

    def debug_dict(self) -> dict:
        spectra = []
        for s in self.penalties:
            dense = s.toarray() if sp.issparse(s) else np.asarray(s)
            spectra.append(np.linalg.eigvalsh(dense).tolist())
        return {"knots": np.asarray(self.knots).tolist(), "boundary": list(self.boundary),
                "penalty_spectra": spectra}

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.debug_dict(), fh, indent=1)


# ------------------------------------------------------------------ knots / crs


def quantile_knots(x, k: int) -> np.ndarray:
    """``k`` knots at evenly spaced quantiles of the distinct values of ``x``."""
    u = np.unique(np.asarray(x, dtype=float))
    if u.size < k:
        raise RankError(f"need at least {k} distinct covariate values, got {u.size}")
    return np.quantile(u, np.linspace(0.0, 1.0, k))


def crs_matrices(knots):
    """Return ``(F, S)``: knot second derivatives ``F @ beta`` and the penalty
    ``S`` with ``beta' S beta`` the integrated squared second derivative."""
    knots = np.asarray(knots, dtype=float)
    K = knots.size
    h = np.diff(knots)
    D = np.zeros((K - 2, K))
    B = np.zeros((K - 2, K - 2))
    for i in range(K - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < K - 3:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
    F_inner = sla.solve(B, D, assume_a="pos")
    F = np.vstack([np.zeros(K), F_inner, np.zeros(K)])
    S = D.T @ F_inner
    return F, (S + S.T) / 2.0


def _interval(knots, x):
    j = np.searchsorted(knots, x, side="right") - 1
    return np.clip(j, 0, knots.size - 2)


def crs_evaluate(x, knots, F=None, deriv: int = 0) -> np.ndarray:
    """Basis matrix (``len(x) x k``) of the cubic regression spline at ``x``.

    ``deriv`` may be 0 or 1. Beyond the end knots the value continues linearly
    with the boundary value and slope.
    """
    knots = np.asarray(knots, dtype=float)
    if F is None:
        F, _ = crs_matrices(knots)
    x = np.asarray(x, dtype=float)
    K = knots.size
    n = x.size
    out = np.zeros((n, K))
    lo, hi = knots[0], knots[-1]
    inside = (x >= lo) & (x <= hi)
    rows = np.flatnonzero(inside)
    if rows.size:
        xi = x[rows]
        j = _interval(knots, xi)
        h = knots[j + 1] - knots[j]
        am = (knots[j + 1] - xi) / h
        ap = (xi - knots[j]) / h
        if deriv == 0:
            wj, wj1 = am, ap
            cm = ((knots[j + 1] - xi) ** 3 / h - h * (knots[j + 1] - xi)) / 6.0
            cp = ((xi - knots[j]) ** 3 / h - h * (xi - knots[j])) / 6.0
        elif deriv == 1:
            wj, wj1 = -1.0 / h, 1.0 / h
            cm = (-3.0 * (knots[j + 1] - xi) ** 2 / h + h) / 6.0
            cp = (3.0 * (xi - knots[j]) ** 2 / h - h) / 6.0
        else:
            raise ValueError("deriv must be 0 or 1")
        out[rows, j] += wj
        out[rows, j + 1] += wj1
        out[rows] += cm[:, None] * F[j] + cp[:, None] * F[j + 1]
    for side in ("lo", "hi"):
        sel = np.flatnonzero(x < lo) if side == "lo" else np.flatnonzero(x > hi)
        if not sel.size:
            continue
        if side == "lo":
            h = knots[1] - knots[0]
            val = np.zeros(K)
            val[0] = 1.0
            slope = np.zeros(K)
            slope[0], slope[1] = -1.0 / h, 1.0 / h
            slope -= h / 3.0 * F[0] + h / 6.0 * F[1]
            edge = lo
        else:
            h = knots[-1] - knots[-2]
            val = np.zeros(K)
            val[-1] = 1.0
            slope = np.zeros(K)
            slope[-2], slope[-1] = -1.0 / h, 1.0 / h
            slope += h / 6.0 * F[-2] + h / 3.0 * F[-1]
            edge = hi
        if deriv == 0:
            out[sel] = val[None, :] + (x[sel] - edge)[:, None] * slope[None, :]
        else:
            out[sel] = slope[None, :]
    return out


def first_derivative_penalty(knots, F=None) -> np.ndarray:
    """Integrated squared first derivative over the knot range, by exact
    Gauss-Legendre quadrature on every knot interval."""
    knots = np.asarray(knots, dtype=float)
    if F is None:
        F, _ = crs_matrices(knots)
    h = np.diff(knots)
    pts = (knots[:-1, None] + h[:, None] * _GL_NODES[None, :]).ravel()
    w = (h[:, None] * _GL_WEIGHTS[None, :]).ravel()
    d = crs_evaluate(pts, knots, F, deriv=1)
    P = d.T @ (w[:, None] * d)
    return (P + P.T) / 2.0


def crs_basis(x, k: int = 10, knots=None) -> SmoothBlock:
    """Cubic regression spline block with the second-derivative penalty."""
    if k < 3:
        raise ValueError("basis dimension k must be at least 3")
    x = np.asarray(x, dtype=float)
    if knots is None:
        knots = quantile_knots(x, k)
    knots = np.asarray(knots, dtype=float)
    if knots.size != k or np.any(np.diff(knots) <= 0):
        raise RankError("knots must be strictly increasing and k in number")
    F, S = crs_matrices(knots)
    X = crs_evaluate(x, knots, F)
    return SmoothBlock(X, [S], knots, (float(x.min()), float(x.max())))


# ----------------------------------------------------------- penalty transforms


def nullspace(S, tol: float = 1e-9):
    """Orthonormal eigenbasis split into (range, nullspace) parts."""
    S = np.asarray(S, dtype=float)
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    cut = tol * max(w.max(), 0.0)
    pos = w > cut
    return w, V, pos


def shrink_penalty(S, eps: float = 0.1) -> np.ndarray:
    w, V, pos = nullspace(S)
    if eps == 0 or pos.all():
        return np.asarray(S, dtype=float).copy()
    w = w.copy()
    w[~pos] = eps * w[pos].min()
    out = (V * w) @ V.T
    return (out + out.T) / 2.0


def shrinkage_modify(block: SmoothBlock, eps: float = 0.1) -> SmoothBlock:
    """Penalize the nullspace too: zero eigenvalues become ``eps`` times the
    smallest positive one, so the whole smooth can shrink to zero."""
    if len(block.penalties) != 1:
        raise ValueError("shrinkage_modify expects a block with exactly one penalty")
    return replace(block, penalties=[shrink_penalty(block.penalties[0], eps)])


def sum_to_zero_basis(colsum) -> np.ndarray:
    """``p x (p-1)`` orthonormal basis of the complement of ``colsum``."""
    c = np.asarray(colsum, dtype=float).reshape(-1, 1)
    Q, _ = np.linalg.qr(c, mode="complete")
    return Q[:, 1:]


def center_constraint(block: SmoothBlock, rows=None) -> SmoothBlock:
    """Absorb the constraint that the smooth sums to zero over ``rows``
    (default: all rows of the block)."""
    X = block.columns
    Xr = X if rows is None else X[rows]
    colsum = np.asarray(Xr.sum(axis=0)).ravel()
    Z = sum_to_zero_basis(colsum)
    Xc = X @ Z
    pens = [Z.T @ np.asarray(S) @ Z for S in block.penalties]
    pens = [(S + S.T) / 2.0 for S in pens]
    Z_total = Z if block.constraint is None else block.constraint @ Z
    return replace(block, columns=Xc, penalties=pens, constraint=Z_total)


# ------------------------------------------------------------- factor blocks


def factor_codes(factor, levels=None):
    """Integer codes and level tuple for a categorical vector."""
    factor = np.asarray(factor, dtype=object)
    if levels is None:
        levels = tuple(sorted(set(factor.tolist())))
    lookup = {lv: i for i, lv in enumerate(levels)}
    try:
        codes = np.fromiter((lookup[v] for v in factor), dtype=np.int64, count=factor.size)
    except KeyError as exc:
        raise LevelError(f"unseen factor level {exc.args[0]!r}") from None
    return codes, tuple(levels)


def re_basis(factor, levels=None) -> SmoothBlock:
    """Indicator columns with an identity (ridge) penalty: iid random intercepts."""
    codes, levels = factor_codes(factor, levels)
    L = len(levels)
    if L < 2:
        raise DegenerateFactorError("random effect needs a factor with at least 2 levels")
    n = codes.size
    X = sp.csr_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, L))
    return SmoothBlock(X, [sp.identity(L, format="csr")], levels=levels)


def _replicate(X_dense, codes, L):
    """Row-wise placement of a dense ``n x k`` block into level column slots."""
    n, k = X_dense.shape
    rows = np.repeat(np.arange(n), k)
    cols = (codes[:, None] * k + np.arange(k)[None, :]).ravel()
    return sp.csr_matrix((X_dense.ravel(), (rows, cols)), shape=(n, L * k))


def fs_penalties(knots, m: int = 1):
    """Per-level roughness penalty of order ``m`` and the ridge on its nullspace."""
    F, S2 = crs_matrices(knots)
    if m == 1:
        P = first_derivative_penalty(knots, F)
    elif m == 2:
        P = S2
    else:
        raise ValueError("penalty order m must be 1 or 2")
    w, V, pos = nullspace(P)
    N = V[:, ~pos]
    ridge = N @ N.T
    return P, (ridge + ridge.T) / 2.0


def fs_basis(x, factor, k: int = 5, m: int = 1, knots=None, levels=None) -> SmoothBlock:
    """Factor smooth: one spline curve per level on shared knots.

    Two penalties, each block-diagonal over levels with a single smoothing
    parameter: the order-``m`` roughness penalty and a ridge on that penalty's
    nullspace, so each level curve can be shrunk away entirely.
    """
    if k < 3:
        raise ValueError("basis dimension k must be at least 3")
    x = np.asarray(x, dtype=float)
    codes, levels = factor_codes(factor, levels)
    L = len(levels)
    counts = np.zeros(L, dtype=np.int64)
    order = np.lexsort((x, codes))
    xs, cs = x[order], codes[order]
    new = np.ones(xs.size, dtype=bool)
    new[1:] = (cs[1:] != cs[:-1]) | (xs[1:] != xs[:-1])
    np.add.at(counts, cs[new], 1)
    bad = np.flatnonzero(counts < 2)
    if bad.size:
        raise DegenerateLevelError(f"level {levels[bad[0]]!r} has fewer than 2 distinct covariate values")
    if knots is None:
        knots = quantile_knots(x, k)
    knots = np.asarray(knots, dtype=float)
    F, _ = crs_matrices(knots)
    X = _replicate(crs_evaluate(x, knots, F), codes, L)
    P, R = fs_penalties(knots, m)
    eye = sp.identity(L, format="csr")
    pens = [sp.kron(eye, sp.csr_matrix(P), format="csr"), sp.kron(eye, sp.csr_matrix(R), format="csr")]
    return SmoothBlock(X, pens, knots, (float(x.min()), float(x.max())), levels=levels)


def by_interaction(block: SmoothBlock, factor, levels=None, center: bool = False) -> SmoothBlock:
    """Replicate a smooth per factor level, zero outside the level's rows.

    Each level gets its own copy of the penalty (one smoothing parameter per
    level). With ``center=True`` every level's curve is constrained to sum to
    zero over that level's rows; the per-level transforms are stored in
    ``constraint`` as an ``L x p_raw x p`` array.
    """
    codes, levels = factor_codes(factor, levels)
    L = len(levels)
    X = block.columns.toarray() if sp.issparse(block.columns) else np.asarray(block.columns)
    if len(block.penalties) != 1:
        raise ValueError("by_interaction expects a block with exactly one penalty")
    S = np.asarray(block.penalties[0].toarray() if sp.issparse(block.penalties[0]) else block.penalties[0])
    if L == 1 and not center:
        return replace(block, levels=levels)
    n, p = X.shape
    Zs = None
    if center:
        Zs = np.empty((L, p, p - 1))
        colsums = np.zeros((L, p))
        np.add.at(colsums, codes, X)
        for lv in range(L):
            Zs[lv] = sum_to_zero_basis(colsums[lv])
        Xl = np.einsum("np,npq->nq", X, Zs[codes])
        q = p - 1
        pen_local = [Zs[lv].T @ S @ Zs[lv] for lv in range(L)]
    else:
        Xl, q = X, p
        pen_local = [S] * L
    cols = _replicate(Xl, codes, L)
    pens = []
    for lv in range(L):
        Pl = sp.lil_matrix((L * q, L * q))
        Pl[lv * q:(lv + 1) * q, lv * q:(lv + 1) * q] = (pen_local[lv] + pen_local[lv].T) / 2.0
        pens.append(Pl.tocsr())
    return replace(block, columns=cols, penalties=pens, constraint=Zs, levels=levels)
