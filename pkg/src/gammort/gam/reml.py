"""Penalized least squares and REML smoothing-parameter selection.

The criterion (profiled scale, constants dropped) is

    V(rho) = (n - d)/2 log(rss + b'S b) + 1/2 log|X'X + S| - 1/2 log|S|_+

with ``S = sum_j exp(rho_j) S_j`` and ``d`` the dimension of the nullspace of
``S``. Its gradient is available in closed form: the derivative of the first
term needs only ``b'S_j b`` (``b`` minimizes the penalized fit), the second
needs ``tr(A^{-1} S_j)``, which only touches entries of ``A^{-1}`` on the
sparsity pattern of ``A``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.csgraph import connected_components

from ..errors import ConditioningError, ConvergenceError
from .design import Design
from .solver import BorderedPlan, SymmetricPattern

RANK_TOL = 1e-9
RHO_BOUNDS = (-15.0, 15.0)


def _components_eigvals(M: sp.csr_matrix) -> np.ndarray:
    """Nonzero-support eigenvalues of a sparse symmetric matrix, computed per
    connected component with equal-sized components batched together."""
    M = sp.csr_matrix(M)
    support = np.flatnonzero(np.diff(M.indptr))
    if support.size == 0:
        return np.empty(0)
    M = M[support][:, support].tocoo()
    ncomp, labels = connected_components(M != 0, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    local = np.empty(labels.size, dtype=np.int64)
    order = np.argsort(labels, kind="stable")
    local[order] = np.arange(labels.size) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    out = []
    for s in np.unique(sizes):
        comps = np.flatnonzero(sizes == s)
        slot = np.full(ncomp, -1, dtype=np.int64)
        slot[comps] = np.arange(comps.size)
        blocks = np.zeros((comps.size, s, s))
        e = slot[labels[M.row]] >= 0
        np.add.at(blocks, (slot[labels[M.row[e]]], local[M.row[e]], local[M.col[e]]), M.data[e])
        out.append(np.linalg.eigvalsh((blocks + np.swapaxes(blocks, 1, 2)) / 2.0).ravel())
    return np.concatenate(out)


def _pseudo_logdet(M) -> tuple[int, float]:
    w = _components_eigvals(sp.csr_matrix(M))
    if w.size == 0 or w.max() <= 0:
        return 0, 0.0
    pos = w > RANK_TOL * w.max()
    return int(pos.sum()), float(np.log(w[pos]).sum())


@dataclass
class RemlEval:
    rho: np.ndarray
    score: float
    grad: np.ndarray
    beta: np.ndarray
    rss: float
    penalty: float
    logdet_A: float
    logdet_S: float
    factor: object


class RemlProblem:
    """Precomputed structure of a penalized regression for repeated solves."""

    def __init__(self, design: Design):
        X = design.X.tocsr()
        self.design = design
        self.X = X
        self.y = design.y
        self.n, self.p = X.shape
        self.n_lambda = design.n_lambda
        XtX = (X.T @ X).tocoo()

        pr, pc, pv, pj, pk = [], [], [], [], []
        for k, pen in enumerate(design.penalties):
            M = sp.coo_matrix(pen.matrix)
            keep = M.data != 0
            pr.append(pen.cols[M.row[keep]])
            pc.append(pen.cols[M.col[keep]])
            pv.append(M.data[keep])
            pj.append(np.full(keep.sum(), pen.lam_index, dtype=np.int64))
            pk.append(np.full(keep.sum(), k, dtype=np.int64))
        cat = (lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.empty(0, dt))
        self.pen_rows, self.pen_cols = cat(pr, np.int64), cat(pc, np.int64)
        self.pen_vals, self.pen_lam = cat(pv, float), cat(pj, np.int64)
        self.pen_id = cat(pk, np.int64)

        # structure from a 0/1 copy: the numeric product drops entries that cancel
        ones = X.copy()
        ones.data[:] = 1.0
        struct = (ones.T @ ones).tocoo()
        self.pattern = SymmetricPattern(self.p, np.concatenate([struct.row, self.pen_rows]),
                                        np.concatenate([struct.col, self.pen_cols]))
        nnz = self.pattern.nnz
        self.xtx = np.bincount(self.pattern.positions(XtX.row, XtX.col), weights=XtX.data, minlength=nnz)
        self.pen_pos = self.pattern.positions(self.pen_rows, self.pen_cols)
        self.xty = np.asarray(X.T @ self.y).ravel()
        self.yty = float(self.y @ self.y)
        self.plan = BorderedPlan(self.pattern, design.border, design.term_of_column())
        self._setup_pseudo_logdet()
        self._setup_hessian()

    # -- log|S|_+ ------------------------------------------------------------

    def _setup_pseudo_logdet(self):
        """Group penalties whose supports overlap. Groups whose members have
        mutually orthogonal ranges have a closed-form pseudo-determinant;
        the rest are handled by a dense eigendecomposition at each rho."""
        pens = self.design.penalties
        m = len(pens)
        self.sep_rank = np.zeros(m, dtype=np.int64)
        self.sep_logdet = np.zeros(m)
        self.sep_lam = np.array([pen.lam_index for pen in pens], dtype=np.int64)
        self.sep_mask = np.ones(m, dtype=bool)
        self.joint = []
        if m == 0:
            self.null_dim = self.p
            return
        inc = sp.csr_matrix((np.ones(self.pen_rows.size), (self.pen_id, self.pen_rows)), shape=(m, self.p))
        inc.data[:] = 1.0
        ngroups, glab = connected_components(inc @ inc.T, directed=False)
        rank_total = 0
        for g in range(ngroups):
            members = np.flatnonzero(glab == g)
            mats = [sp.csr_matrix(pens[k].matrix) for k in members]
            separable = True
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    if pens[members[a]].cols.size != pens[members[b]].cols.size or \
                            (pens[members[a]].cols != pens[members[b]].cols).any():
                        separable = False
                        break
                    prod = abs(mats[a] @ mats[b])
                    bound = abs(mats[a]).max() * abs(mats[b]).max() * max(mats[a].shape[0], 1)
                    if prod.nnz and prod.max() > 1e-10 * bound:
                        separable = False
                        break
                if not separable:
                    break
            if separable:
                for k, M in zip(members, mats):
                    r, ld = _pseudo_logdet(M)
                    self.sep_rank[k], self.sep_logdet[k] = r, ld
                    rank_total += r
            else:
                self.sep_mask[members] = False
                sel = np.isin(self.pen_id, members)
                support = np.unique(self.pen_rows[sel])
                loc = np.searchsorted(support, self.pen_rows[sel])
                locc = np.searchsorted(support, self.pen_cols[sel])
                q = support.size
                local = [np.zeros((q, q)) for _ in members]
                ids = self.pen_id[sel]
                for i, k in enumerate(members):
                    s = ids == k
                    np.add.at(local[i], (loc[s], locc[s]), self.pen_vals[sel][s])
                total = sum(local)
                w = np.linalg.eigvalsh(total)
                r = int((w > RANK_TOL * w.max()).sum()) if w.size and w.max() > 0 else 0
                rank_total += r
                self.joint.append({"lam": np.array([pens[k].lam_index for k in members]),
                                   "mats": np.stack(local), "rank": r})
        self.null_dim = self.p - rank_total

    def _pseudo_logdet_and_grad(self, lam, rho):
        grad = np.zeros(self.n_lambda)
        s = self.sep_mask
        logdet = float((self.sep_rank[s] * rho[self.sep_lam[s]]).sum() + self.sep_logdet[s].sum())
        np.add.at(grad, self.sep_lam[s], self.sep_rank[s])
        for grp in self.joint:
            Sl = np.tensordot(lam[grp["lam"]], grp["mats"], axes=1)
            w, V = np.linalg.eigh((Sl + Sl.T) / 2.0)
            r = grp["rank"]
            if r == 0:
                continue
            w, V = w[-r:], V[:, -r:]
            if w.min() <= 0:
                raise ConditioningError("penalty pseudo-determinant is numerically singular")
            logdet += float(np.log(w).sum())
            Sinv = (V / w) @ V.T
            for lam_j, j, Mj in zip(lam[grp["lam"]], grp["lam"], grp["mats"]):
                grad[j] += lam_j * float((Sinv * Mj).sum())
        return logdet, grad

    # -- Hessian structure -----------------------------------------------------

    def _setup_hessian(self):
        """Arrange penalty entries into dense per-block pieces so that the
        traces ``tr(A^{-1} S_i A^{-1} S_j)`` can be formed block by block.

        Each interior block holds up to ``q`` penalty pieces (one per
        smoothing parameter touching it); border entries form ``nb x nb``
        pieces. Penalties coupling border and interior columns are not
        supported, and the exact Hessian is then unavailable.
        """
        plan = self.plan
        border = np.zeros(self.p, dtype=bool)
        border[plan.bidx] = True
        rb, cb = border[self.pen_rows], border[self.pen_cols]
        self.has_hessian = not (rb != cb).any()
        if not self.has_hessian:
            return
        m = self.n_lambda
        bpos = np.full(self.p, -1, dtype=np.int64)
        bpos[plan.bidx] = np.arange(plan.nb)
        self.border_pieces = np.zeros((m, plan.nb, plan.nb))
        e = rb & cb
        np.add.at(self.border_pieces, (self.pen_lam[e], bpos[self.pen_rows[e]], bpos[self.pen_cols[e]]),
                  self.pen_vals[e])
        self.group_pieces = []
        inner = ~rb
        r, c = self.pen_rows[inner], self.pen_cols[inner]
        lam, val = self.pen_lam[inner], self.pen_vals[inner]
        grp = plan.col_group[r]
        for gi, g in enumerate(plan.groups):
            sel = grp == gi
            if not sel.any():
                self.group_pieces.append(None)
                continue
            mem, j = plan.col_member[r[sel]], lam[sel]
            key = np.unique(mem * m + j)
            kmem, klam = key // m, key % m
            counts = np.bincount(kmem, minlength=g["m"])
            q = int(counts.max())
            slot = np.arange(key.size) - np.repeat(np.cumsum(counts) - counts, counts)
            lam_slots = np.full((g["m"], q), -1, dtype=np.int64)
            lam_slots[kmem, slot] = klam
            eslot = slot[np.searchsorted(key, mem * m + j)]
            S = np.zeros((g["m"], q, g["size"], g["size"]))
            np.add.at(S, (mem, eslot, plan.col_local[r[sel]], plan.col_local[c[sel]]), val[sel])
            self.group_pieces.append((S, lam_slots))

    def _trace_products(self, factor) -> np.ndarray:
        """Matrix of ``tr(A^{-1} S_i A^{-1} S_j)`` (unscaled penalties)."""
        m = self.n_lambda
        nb = self.plan.nb
        K = factor.schur_inverse()
        T = np.zeros((m + 1, m + 1))
        Mb = self.border_pieces.copy()
        for pieces, Binv, G in zip(self.group_pieces, factor.block_inverses(), factor.Gs):
            if pieces is None:
                continue
            S, lam_slots = pieces
            idx = np.where(lam_slots < 0, m, lam_slots)
            BS = Binv[:, None] @ S
            # block-diagonal part of A^{-1}
            t = np.einsum("maij,mbji->mab", BS, BS)
            if nb:
                V = S @ G[:, None]
                U = BS @ (G @ K)[:, None]
                cross = np.einsum("masn,mbsn->mab", U, V)
                t += cross + np.swapaxes(cross, 1, 2)
                Mi = np.einsum("msn,masp->manp", G, V)
                keep = lam_slots >= 0
                np.add.at(Mb, lam_slots[keep], Mi[keep])
            np.add.at(T, (idx[:, :, None], idx[:, None, :]), t)
        T = T[:m, :m]
        if nb:
            N = K @ Mb
            T += np.einsum("iab,jba->ij", N, N)
        return T

    def hessian(self, ev: RemlEval) -> np.ndarray:
        """Exact second derivatives of the REML score at ``ev``."""
        if not self.has_hessian:
            raise ValueError("exact Hessian needs penalties confined to border or interior columns")
        m = self.n_lambda
        lam = np.exp(ev.rho)
        factor = ev.factor
        beta = ev.beta
        D = ev.rss + ev.penalty
        nd = self.n - self.null_dim
        # u_j = lam_j S_j beta, and the solves A^{-1} U
        U = np.zeros((self.p, m))
        np.add.at(U, (self.pen_rows, self.pen_lam), lam[self.pen_lam] * self.pen_vals * beta[self.pen_cols])
        W = factor.solve(U)
        Dj = lam * self.penalty_terms(beta)
        Dij = np.diag(Dj) - 2.0 * U.T @ W
        Z = factor.selected_inverse()
        tr = np.bincount(self.pen_lam, weights=Z[self.pen_pos] * self.pen_vals, minlength=m)
        TT = self._trace_products(factor)
        H = 0.5 * nd * (Dij / D - np.outer(Dj, Dj) / D ** 2)
        H += 0.5 * (np.diag(lam * tr) - np.outer(lam, lam) * TT)
        for grp in self.joint:
            Sl = np.tensordot(lam[grp["lam"]], grp["mats"], axes=1)
            w, V = np.linalg.eigh((Sl + Sl.T) / 2.0)
            r = grp["rank"]
            if r == 0:
                continue
            Sinv = (V[:, -r:] / w[-r:]) @ V[:, -r:].T
            PS = [lj * Sinv @ Mj for lj, Mj in zip(lam[grp["lam"]], grp["mats"])]
            for a, ja in enumerate(grp["lam"]):
                H[ja, ja] -= 0.5 * np.trace(PS[a])
                for b, jb in enumerate(grp["lam"]):
                    H[ja, jb] += 0.5 * float((PS[a] * PS[b].T).sum())
        return (H + H.T) / 2.0

    # -- solves --------------------------------------------------------------

    def system(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        w = lam[self.pen_lam] * self.pen_vals if self.pen_vals.size else np.empty(0)
        return self.xtx + np.bincount(self.pen_pos, weights=w, minlength=self.pattern.nnz)

    def solve(self, lam):
        """Factor ``A`` at ``lam`` and return (factor, beta, A data)."""
        data = self.system(lam)
        factor = self.plan.factor(data)
        beta = factor.solve(self.xty)
        # one step of iterative refinement
        A = self.pattern.matrix(data)
        beta = beta + factor.solve(self.xty - A @ beta)
        return factor, beta, data

    def penalty_terms(self, beta) -> np.ndarray:
        """``beta' S_j beta`` for every smoothing parameter j."""
        if self.pen_vals.size == 0:
            return np.zeros(self.n_lambda)
        q = beta[self.pen_rows] * self.pen_vals * beta[self.pen_cols]
        return np.bincount(self.pen_lam, weights=q, minlength=self.n_lambda)

    def evaluate(self, rho) -> RemlEval:
        rho = np.asarray(rho, dtype=float).ravel()
        if rho.size != self.n_lambda:
            raise ValueError(f"expected {self.n_lambda} log smoothing parameters, got {rho.size}")
        lam = np.exp(rho)
        factor, beta, _ = self.solve(lam)
        resid = self.y - self.X @ beta
        rss = float(resid @ resid)
        bsb = self.penalty_terms(beta)
        pen = float((lam * bsb).sum())
        D = rss + pen
        if not (math.isfinite(D) and D > 0) or not math.isfinite(factor.logdet):
            raise ConditioningError(f"degenerate REML terms (rss + penalty = {D!r}, "
                                    f"log|A| = {factor.logdet!r})")
        logdet_S, dlogdet_S = self._pseudo_logdet_and_grad(lam, rho)
        nd = self.n - self.null_dim
        score = 0.5 * nd * math.log(D) + 0.5 * factor.logdet - 0.5 * logdet_S
        grad = np.zeros(self.n_lambda)
        if self.n_lambda:
            Z = factor.selected_inverse()
            tr = np.bincount(self.pen_lam, weights=Z[self.pen_pos] * self.pen_vals, minlength=self.n_lambda)
            grad = 0.5 * nd * lam * bsb / D + 0.5 * lam * tr - 0.5 * dlogdet_S
        return RemlEval(rho, float(score), grad, beta, rss, pen, factor.logdet, logdet_S, factor)

    def column_edf(self, factor) -> np.ndarray:
        """Diagonal of ``A^{-1} X'X``: per-column effective degrees of freedom."""
        Z = factor.selected_inverse()
        return np.bincount(self.pattern.rows, weights=Z * self.xtx, minlength=self.p)

    def hat_diagonal(self, factor, chunk_pairs: int = 4_000_000) -> np.ndarray:
        """Leverages ``x_i' A^{-1} x_i``; every product of two nonzeros of a row
        lies on the pattern of ``X'X``, so the selected inverse suffices."""
        Z = factor.selected_inverse()
        X = self.X
        counts = np.diff(X.indptr)
        sq = counts.astype(np.int64) ** 2
        h = np.zeros(self.n)
        start = 0
        while start < self.n:
            stop = start + max(1, int(np.searchsorted(np.cumsum(sq[start:]), chunk_pairs)))
            stop = min(stop, self.n)
            c = counts[start:stop]
            s2 = sq[start:stop]
            row = np.repeat(np.arange(start, stop), s2)
            first = np.repeat(np.cumsum(s2) - s2, s2)
            off = np.arange(s2.sum()) - first
            cr = np.repeat(c, s2)
            base = np.repeat(X.indptr[start:stop], s2)
            ia = base + off // np.maximum(cr, 1)
            ib = base + off % np.maximum(cr, 1)
            ja, jb = X.indices[ia], X.indices[ib]
            val = X.data[ia] * X.data[ib] * Z[self.pattern.positions(ja, jb)]
            h[start:stop] = np.bincount(row - start, weights=val, minlength=stop - start)
            start = stop
        return h


def pls_solve(design: Design, lam):
    """Penalized least squares at fixed smoothing parameters.

    Returns ``(beta, hat_diagonal, rss)``.
    """
    prob = RemlProblem(design)
    factor, beta, _ = prob.solve(np.atleast_1d(np.asarray(lam, dtype=float)) if prob.n_lambda else np.empty(0))
    resid = prob.y - prob.X @ beta
    return beta, prob.hat_diagonal(factor), float(resid @ resid)


def reml_score(design: Design, rho) -> float:
    return RemlProblem(design).evaluate(np.atleast_1d(rho)).score


@dataclass
class RemlResult:
    problem: RemlProblem
    final: RemlEval
    iterations: int
    evaluations: int
    converged: bool
    grad_norm: float
    trace: list


def _projected_grad(rho, grad, lo, hi):
    g = grad.copy()
    g[(rho <= lo) & (g > 0)] = 0.0
    g[(rho >= hi) & (g < 0)] = 0.0
    return g


def _free_set(rho, grad, lo, hi):
    return ~(((rho <= lo) & (grad > 0)) | ((rho >= hi) & (grad < 0)))


def _newton_step(grad, hess, free, max_step):
    step = np.zeros_like(grad)
    if not free.any():
        return step
    Hf = hess[np.ix_(free, free)]
    w, V = np.linalg.eigh(Hf)
    floor = max(np.abs(w).max(), 1.0) * 1e-7
    w = np.maximum(np.abs(w), floor)
    step[free] = -V @ ((V.T @ grad[free]) / w)
    big = np.abs(step).max()
    if big > max_step:
        step *= max_step / big
    return step


def minimize_reml(problem: RemlProblem, rho0=None, bounds=RHO_BOUNDS, max_iter: int = 200,
                  gtol: float = 1e-3, ftol: float = 1e-6, max_step: float = 5.0) -> RemlResult:
    """Minimize the REML score over log smoothing parameters inside ``bounds``.

    Uses Newton's method with the exact Hessian (indefinite curvature is
    replaced by its absolute value, steps are halved until the score drops),
    or L-BFGS-B when the Hessian is unavailable. Converged when the last step
    improved the score by less than ``ftol`` and the projected gradient has
    infinity norm below ``gtol``.
    """
    m = problem.n_lambda
    lo, hi = bounds
    rho = np.zeros(m) if rho0 is None else np.clip(np.asarray(rho0, dtype=float).ravel(), lo, hi)
    trace: list = []

    def record(ev):
        g = float(np.abs(_projected_grad(ev.rho, ev.grad, lo, hi)).max(initial=0.0))
        trace.append({"score": ev.score, "grad_inf": g})
        return g

    ev = problem.evaluate(rho)
    g = record(ev)
    if m == 0:
        return RemlResult(problem, ev, 0, 1, True, 0.0, trace)
    if not problem.has_hessian:
        return _minimize_lbfgs(problem, ev, bounds, max_iter, gtol, ftol, trace, record)
    improvement = np.inf
    for it in range(1, max_iter + 1):
        if g < gtol and improvement < ftol:
            return RemlResult(problem, ev, it - 1, len(trace), True, g, trace)
        H = problem.hessian(ev)
        free = _free_set(ev.rho, ev.grad, lo, hi)
        step = _newton_step(ev.grad, H, free, max_step)
        accepted = None
        for _ in range(30):
            trial = np.clip(ev.rho + step, lo, hi)
            new = problem.evaluate(trial)
            record(new)
            if new.score <= ev.score:
                accepted = new
                break
            step = step / 2.0
        if accepted is None:
            # no decrease representable in floating point: a stationary point
            improvement = 0.0
            if g < gtol:
                return RemlResult(problem, ev, it, len(trace), True, g, trace)
            raise ConvergenceError(f"REML line search failed with projected gradient {g:.3g}", trace)
        improvement = ev.score - accepted.score
        ev = accepted
        g = float(np.abs(_projected_grad(ev.rho, ev.grad, lo, hi)).max())
    if g < gtol and improvement < ftol:
        return RemlResult(problem, ev, max_iter, len(trace), True, g, trace)
    raise ConvergenceError(f"REML optimizer did not converge in {max_iter} iterations "
                           f"(projected gradient {g:.3g}, last improvement {improvement:.3g})", trace)


def _minimize_lbfgs(problem, ev, bounds, max_iter, gtol, ftol, trace, record):
    lo, hi = bounds
    m = problem.n_lambda
    cache = {}

    def fun(r):
        key = r.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = problem.evaluate(r)
            record(cache[key])
        return cache[key].score, cache[key].grad

    iterations = 0
    rho = ev.rho
    while True:
        res = minimize(fun, rho, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * m,
                       options={"maxiter": max_iter - iterations, "ftol": ftol * 1e-9,
                                "gtol": gtol * 1e-2, "maxcor": 20})
        iterations += max(int(res.nit), 1)
        ev = problem.evaluate(res.x)
        g = float(np.abs(_projected_grad(ev.rho, ev.grad, lo, hi)).max())
        if g < gtol:
            return RemlResult(problem, ev, iterations, len(trace), True, g, trace)
        if iterations >= max_iter:
            raise ConvergenceError(f"REML optimizer did not converge in {max_iter} iterations "
                                   f"(projected gradient {g:.3g})", trace)
        rho = ev.rho
