"""Sparse symmetric factorization for bordered block-diagonal systems.

The penalized normal matrix ``A = X'X + S`` of a mortality GAMM is block
diagonal once the few columns touching every observation (intercept, global
smooths) are set aside as a *border*: each age (or age x population) cell only
couples with itself. Ordering the interior blocks first and the border last
gives a Cholesky factorization with no fill outside the border, and selected
entries of ``A^{-1}`` on the sparsity pattern of ``A`` come out of the same
block quantities. Any symmetric pattern is accepted; a pattern without block
structure simply degenerates to one dense block.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..errors import SingularFitError


class SymmetricPattern:
    """Fixed structural pattern of a symmetric ``p x p`` matrix, stored as
    row-major sorted (row, col) pairs covering both triangles."""

    def __init__(self, p: int, rows, cols):
        lin = np.unique(np.asarray(rows, dtype=np.int64) * p + np.asarray(cols, dtype=np.int64))
        diag = np.arange(p, dtype=np.int64) * (p + 1)
        both = np.union1d(lin, diag)
        both = np.union1d(both, (both % p) * p + both // p)
        self.p = p
        self.lin = both
        self.rows = both // p
        self.cols = both % p
        self.indptr = np.searchsorted(self.rows, np.arange(p + 1))

    @property
    def nnz(self) -> int:
        return self.lin.size

    def positions(self, rows, cols) -> np.ndarray:
        key = np.asarray(rows, dtype=np.int64) * self.p + np.asarray(cols, dtype=np.int64)
        pos = np.searchsorted(self.lin, key)
        if pos.size and (pos.max(initial=0) >= self.lin.size or (self.lin[np.minimum(pos, self.lin.size - 1)] != key).any()):
            raise ValueError("entry outside the pattern")
        return pos

    def matrix(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.cols, self.indptr), shape=(self.p, self.p))


class BorderedPlan:
    """Symbolic analysis: interior components, their ordering, and where every
    pattern entry lands in the dense block buffers."""

    def __init__(self, pattern: SymmetricPattern, border, column_terms=None):
        p = pattern.p
        border = np.asarray(border, dtype=bool)
        self.pattern = pattern
        self.column_terms = column_terms
        self.bidx = np.flatnonzero(border)
        nb = self.bidx.size
        self.nb = nb
        bpos = np.full(p, -1, dtype=np.int64)
        bpos[self.bidx] = np.arange(nb)

        interior = np.flatnonzero(~border)
        ipos = np.full(p, -1, dtype=np.int64)
        ipos[interior] = np.arange(interior.size)
        r, c = pattern.rows, pattern.cols
        ii = (~border[r]) & (~border[c])
        adj = sp.csr_matrix((np.ones(ii.sum()), (ipos[r[ii]], ipos[c[ii]])),
                            shape=(interior.size, interior.size))
        ncomp, labels = connected_components(adj, directed=False) if interior.size else (0, np.empty(0, int))
        sizes = np.bincount(labels, minlength=ncomp) if ncomp else np.empty(0, int)

        # group components of equal size so they factor as one batched stack
        self.groups = []
        ordered = []
        comp_group = np.empty(ncomp, dtype=np.int64)
        comp_member = np.empty(ncomp, dtype=np.int64)
        b_off = 0
        row_off = 0
        order = np.argsort(labels, kind="stable")
        members_of = np.split(interior[order], np.cumsum(sizes)[:-1]) if ncomp else []
        for gi, s in enumerate(np.unique(sizes)):
            comps = np.flatnonzero(sizes == s)
            cols = np.stack([members_of[k] for k in comps])  # (m, s), columns sorted
            comp_group[comps] = gi
            comp_member[comps] = np.arange(comps.size)
            self.groups.append({"size": int(s), "m": comps.size, "cols": cols,
                                "b_off": b_off, "row_off": row_off})
            b_off += comps.size * s * s
            row_off += comps.size * s
            ordered.append(cols.ravel())
        self.b_size = b_off
        self.n_int = row_off
        self.int_order = np.concatenate(ordered) if ordered else np.empty(0, dtype=np.int64)
        # per interior column: group, member, local index, ordered row
        col_group = np.full(p, -1, dtype=np.int64)
        col_local = np.full(p, -1, dtype=np.int64)
        col_row = np.full(p, -1, dtype=np.int64)
        col_boff = np.full(p, -1, dtype=np.int64)
        col_size = np.full(p, -1, dtype=np.int64)
        col_member = np.full(p, -1, dtype=np.int64)
        for gi, g in enumerate(self.groups):
            m, s = g["m"], g["size"]
            cols = g["cols"]
            col_group[cols] = gi
            col_member[cols] = np.arange(m)[:, None]
            col_local[cols] = np.arange(s)[None, :]
            col_row[cols] = g["row_off"] + np.arange(m)[:, None] * s + np.arange(s)[None, :]
            col_boff[cols] = g["b_off"]
            col_size[cols] = s
        self.col_row = col_row
        self.col_group = col_group
        self.col_member = col_member
        self.col_local = col_local

        # entry classes
        rb, cb = border[r], border[c]
        e_B = np.flatnonzero(~rb & ~cb)
        self.e_B = e_B
        self.t_B = (col_boff[r[e_B]] + (col_member[r[e_B]] * col_size[r[e_B]] + col_local[r[e_B]])
                    * col_size[r[e_B]] + col_local[c[e_B]])
        e_C = np.flatnonzero(~rb & cb)
        self.e_C = e_C
        self.t_C = col_row[r[e_C]] * nb + bpos[c[e_C]]
        e_Ct = np.flatnonzero(rb & ~cb)
        self.e_Ct = e_Ct
        self.t_Ct = col_row[c[e_Ct]] * nb + bpos[r[e_Ct]]
        e_D = np.flatnonzero(rb & cb)
        self.e_D = e_D
        self.t_D = bpos[r[e_D]] * nb + bpos[c[e_D]]

    def factor(self, data) -> "BorderedFactor":
        return BorderedFactor(self, np.asarray(data, dtype=float))

    def blame(self, cols) -> list[str]:
        if self.column_terms is None:
            return [f"column {int(c)}" for c in np.atleast_1d(cols)[:3]]
        names = []
        for c in np.atleast_1d(cols):
            t = str(self.column_terms[int(c)])
            if t not in names:
                names.append(t)
        return names


class BorderedFactor:
    """Numeric factorization of ``A`` under a :class:`BorderedPlan`."""

    def __init__(self, plan: BorderedPlan, data):
        self.plan = plan
        nb = plan.nb
        Bbuf = np.zeros(plan.b_size)
        Bbuf[plan.t_B] = data[plan.e_B]
        C = np.zeros(plan.n_int * nb)
        C[plan.t_C] = data[plan.e_C]
        C = C.reshape(plan.n_int, nb)
        D = np.zeros(nb * nb)
        D[plan.t_D] = data[plan.e_D]
        D = D.reshape(nb, nb)
        self.blocks, self.chols, self.Cs, self.Gs = [], [], [], []
        logdet = 0.0
        schur = D.copy()
        for g in plan.groups:
            m, s = g["m"], g["size"]
            B = Bbuf[g["b_off"]:g["b_off"] + m * s * s].reshape(m, s, s)
            try:
                L = np.linalg.cholesky(B)
            except np.linalg.LinAlgError:
                bad = self._find_bad(B)
                cols = g["cols"][bad]
                raise SingularFitError(
                    "penalized normal matrix is not positive definite in the block of "
                    + ", ".join(plan.blame(cols)), plan.blame(cols)) from None
            logdet += 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
            Cg = C[g["row_off"]:g["row_off"] + m * s].reshape(m, s, nb)
            Gg = np.linalg.solve(B, Cg) if nb else np.zeros((m, s, 0))
            if nb:
                schur -= np.einsum("msb,msc->bc", Cg, Gg)
            self.blocks.append(B)
            self.chols.append(L)
            self.Cs.append(Cg)
            self.Gs.append(Gg)
        self.schur = (schur + schur.T) / 2.0
        if nb:
            try:
                self.schur_cho = sla.cho_factor(self.schur, lower=True, check_finite=False)
                dg = np.diag(self.schur_cho[0])
                if not np.all(dg > 0) or not np.all(np.isfinite(dg)):
                    raise np.linalg.LinAlgError
            except (np.linalg.LinAlgError, sla.LinAlgError):
                raise SingularFitError(
                    "penalized normal matrix is not positive definite in "
                    + ", ".join(plan.blame(plan.bidx)), plan.blame(plan.bidx)) from None
            logdet += 2.0 * np.log(dg).sum()
        else:
            self.schur_cho = None
        self.logdet = float(logdet)

    @staticmethod
    def _find_bad(B):
        for i in range(B.shape[0]):
            try:
                np.linalg.cholesky(B[i])
            except np.linalg.LinAlgError:
                return i
        return 0

    def solve(self, b) -> np.ndarray:
        """Solve ``A x = b`` for a vector or a ``p x r`` matrix ``b``."""
        plan = self.plan
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        if vec:
            b = b[:, None]
        x = np.zeros_like(b)
        rhs_b = b[plan.bidx].copy()
        partial = []
        for g, B, Cg in zip(plan.groups, self.blocks, self.Cs):
            xg = np.linalg.solve(B, b[g["cols"]])
            partial.append(xg)
            if plan.nb:
                rhs_b -= np.einsum("msb,msr->br", Cg, xg)
        xb = sla.cho_solve(self.schur_cho, rhs_b, check_finite=False) if plan.nb else rhs_b
        x[plan.bidx] = xb
        for g, Gg, xg in zip(plan.groups, self.Gs, partial):
            if plan.nb:
                xg = xg - Gg @ xb
            x[g["cols"]] = xg
        return x[:, 0] if vec else x

    def schur_inverse(self) -> np.ndarray:
        nb = self.plan.nb
        if not nb:
            return np.zeros((0, 0))
        K = sla.cho_solve(self.schur_cho, np.eye(nb), check_finite=False)
        return (K + K.T) / 2.0

    def block_inverses(self) -> list:
        """Inverses of the interior diagonal blocks, one stack per size group."""
        out = []
        for L in self.chols:
            Linv = np.linalg.inv(L)
            out.append(np.einsum("mki,mkj->mij", Linv, Linv))
        return out

    def selected_inverse(self) -> np.ndarray:
        """Entries of ``A^{-1}`` at every position of the pattern.

        With ``G = B^{-1} C`` and ``K`` the inverse Schur complement, the
        interior block of ``A^{-1}`` is ``B^{-1} + G K G'``, the coupling
        block is ``-G K`` and the border block is ``K``.
        """
        plan = self.plan
        nb = plan.nb
        out = np.empty(plan.pattern.nnz)
        K = self.schur_inverse()
        Zbuf = np.empty(plan.b_size)
        Zc = np.empty((plan.n_int, nb))
        for g, Binv, Gg in zip(plan.groups, self.block_inverses(), self.Gs):
            m, s = g["m"], g["size"]
            if nb:
                H = Gg @ K
                Binv = Binv + H @ np.swapaxes(Gg, 1, 2)
                Zc[g["row_off"]:g["row_off"] + m * s] = -H.reshape(m * s, nb)
            Zbuf[g["b_off"]:g["b_off"] + m * s * s] = Binv.ravel()
        out[plan.e_B] = Zbuf[plan.t_B]
        zc = Zc.ravel()
        out[plan.e_C] = zc[plan.t_C]
        out[plan.e_Ct] = zc[plan.t_Ct]
        out[plan.e_D] = K.ravel()[plan.t_D]
        return out
