"""Bounded dual simplex for ``min c.x  s.t.  row_lo <= A x <= row_hi, lb <= x <= ub``.

The solver works in the active-set (vertex) form: a basis is a set of ``n``
linearly independent constraints, each a variable bound or a row, held at
one of its sides. With every variable sitting at the bound that matches the
sign of its cost, the starting basis is dual feasible, and each iteration
swaps one violated constraint in for one whose multiplier hits zero. The
explicit basis inverse is updated by a rank-one formula and refactored
periodically.

Infinite variable bounds are replaced by artificial ones of magnitude
``art_bound``; an optimum that leans on one of them is reported as
unbounded. After a run of degenerate steps the pricing switches to Bland's
rule (lowest index), which rules out cycling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import kernels

LOWER, UPPER, EQUAL = 1, -1, 0


class LpError(RuntimeError):
    pass


@dataclass
class LpBasis:
    """Indices of the working constraints and their sides.

    Constraint ``j < n`` is the bound of variable ``j``; ``n + i`` is row ``i``.
    """

    ws: np.ndarray
    side: np.ndarray

    def copy(self) -> "LpBasis":
        return LpBasis(self.ws.copy(), self.side.copy())


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    fun: float = np.nan
    row_duals: np.ndarray | None = None
    bound_duals: np.ndarray | None = None
    iterations: int = 0
    basis: LpBasis | None = None
    info: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == "optimal"


class DualSimplex:
    """Reusable solver for a fixed ``(c, A, row_lo, row_hi)``; bounds vary per call.

    Keeping one instance across branch-and-bound nodes lets a child start
    from the parent's factorized basis.
    """

    def __init__(self, c, A, row_lo, row_hi, tol: float = 1e-9, art_bound: float = 1e7,
                 refactor_every: int = 64, max_iter: int | None = None):
        self.c = np.asarray(c, dtype=float)
        A = sp.csr_matrix(A, dtype=float)
        self.A = A
        self.n = self.c.size
        self.m = A.shape[0]
        self.row_lo = np.asarray(row_lo, dtype=float)
        self.row_hi = np.asarray(row_hi, dtype=float)
        if A.shape[1] != self.n or self.row_lo.size != self.m or self.row_hi.size != self.m:
            raise LpError("inconsistent LP dimensions")
        for arr in (self.c, A.data, self.row_lo[np.isfinite(self.row_lo)], self.row_hi[np.isfinite(self.row_hi)]):
            if not np.all(np.isfinite(arr)):
                raise LpError("LP coefficients must be finite")
        self.tol = tol
        self.pivot_tol = 1e-7
        self.art_bound = art_bound
        self.refactor_every = refactor_every
        self.max_iter = max_iter if max_iter is not None else 50 * (self.n + self.m) + 1000
        rn = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        self.norms = np.concatenate((np.ones(self.n), np.where(rn > 0, rn, 1.0)))
        self.state = None

    # -- basis algebra ---------------------------------------------------------
    def _row_dense(self, k: int) -> np.ndarray:
        if k < self.n:
            e = np.zeros(self.n)
            e[k] = 1.0
            return e
        i = k - self.n
        out = np.zeros(self.n)
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        out[self.A.indices[lo:hi]] = self.A.data[lo:hi]
        return out

    def _times_binv(self, k: int, Binv: np.ndarray) -> np.ndarray:
        """``Binv.T @ a_k`` for constraint ``k``."""
        if k < self.n:
            return Binv[k].copy()
        i = k - self.n
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        return self.A.data[lo:hi] @ Binv[self.A.indices[lo:hi]]

    def _factor(self, st):
        W = np.vstack([self._row_dense(k) for k in st["ws"]])
        try:
            st["Binv"] = np.linalg.inv(W)
        except np.linalg.LinAlgError:
            raise LpError("singular basis") from None
        self._resolve(st)

    def _resolve(self, st):
        Binv = st["Binv"]
        st["x"] = Binv @ self._bvals(st)
        st["act"] = self.A @ st["x"]
        st["lam"] = Binv.T @ self.c

    def _bvals(self, st):
        lo, hi = self._lo_all, self._hi_all
        ws, side = st["ws"], st["side"]
        return np.where(side == UPPER, hi[ws], lo[ws])

    # -- public ----------------------------------------------------------------
    def solve(self, lb, ub, basis: LpBasis | None = None, reuse: bool = False) -> LpResult:
        n = self.n
        lb = np.asarray(lb, dtype=float).copy()
        ub = np.asarray(ub, dtype=float).copy()
        if lb.size != n or ub.size != n:
            raise LpError("bound vectors must have one entry per variable")
        if np.any(lb > ub + self.tol) or np.any(self.row_lo > self.row_hi + self.tol):
            return LpResult("infeasible", info={"reason": "crossed bounds"})
        art_lo = ~np.isfinite(lb)
        art_hi = ~np.isfinite(ub)
        lb[art_lo] = -self.art_bound
        ub[art_hi] = self.art_bound
        self._art_lo, self._art_hi = art_lo, art_hi
        self._lo_all = np.concatenate((lb, self.row_lo))
        self._hi_all = np.concatenate((ub, self.row_hi))
        eq_all = self._lo_all == self._hi_all
        if reuse and self.state is not None:
            st = self.state
            st["side"] = np.where(eq_all[st["ws"]], EQUAL, np.where(st["side"] == EQUAL, LOWER, st["side"]))
            self._resolve(st)
        elif basis is not None:
            st = {"ws": basis.ws.copy(), "side": basis.side.copy()}
            st["side"] = np.where(eq_all[st["ws"]], EQUAL, np.where(st["side"] == EQUAL, LOWER, st["side"]))
            try:
                self._factor(st)
                ok = self._dual_feasible(st)
            except LpError:
                ok = False
            if not ok:
                st = self._cold(eq_all)
        else:
            st = self._cold(eq_all)
        self.state = st
        return self._iterate(st, eq_all)

    def _cold(self, eq_all):
        n = self.n
        side = np.where(self.c < 0, UPPER, LOWER)
        side = np.where(eq_all[:n], EQUAL, side)
        st = {"ws": np.arange(n), "side": side, "Binv": np.eye(n)}
        self._resolve(st)
        return st

    def _dual_feasible(self, st) -> bool:
        s = st["side"]
        return bool(np.all(s * st["lam"] >= -1e3 * self.tol))

    def _iterate(self, st, eq_all) -> LpResult:
        n, tol = self.n, self.tol
        in_ws = np.zeros(n + self.m, dtype=bool)
        in_ws[st["ws"]] = True
        it = 0
        since = 0
        degenerate = 0
        bland = False
        lo_all, hi_all, norms = self._lo_all, self._hi_all, self.norms
        while True:
            vals = np.concatenate((st["x"], st["act"]))
            viol_lo = lo_all - vals
            viol_hi = vals - hi_all
            viol = np.maximum(viol_lo, viol_hi)
            viol[in_ws] = 0.0
            scaled = viol / norms
            if bland:
                cand = np.flatnonzero(scaled > tol)
                if cand.size == 0:
                    break
                p = int(cand[0])
            else:
                p = int(np.argmax(scaled))
                if scaled[p] <= tol:
                    break
            if it >= self.max_iter:
                raise LpError(f"simplex iteration cap {self.max_iter} reached (cycling?)")
            it += 1
            sigma = 1.0 if viol_lo[p] >= viol_hi[p] else -1.0
            target = lo_all[p] if sigma > 0 else hi_all[p]
            Binv = st["Binv"]
            w = self._times_binv(p, Binv)
            side = st["side"]
            r, t = kernels.dual_ratio(w, st["lam"], side.astype(np.int64), sigma,
                                      st["ws"].astype(np.int64), self.pivot_tol, bland)
            if r < 0:
                return LpResult("infeasible", iterations=it, basis=LpBasis(st["ws"].copy(), side.copy()),
                                info={"violated": p})
            degenerate = degenerate + 1 if t <= tol else 0
            if degenerate > 50:
                bland = True
            lam = st["lam"]
            lam -= t * sigma * w
            lam[r] = t * sigma
            wr = w[r]
            theta = (target - vals[p]) / wr
            d = Binv[:, r].copy()
            st["x"] += theta * d
            st["act"] += theta * (self.A @ d)
            kernels.rank1_update(Binv, d, w, r, wr)
            in_ws[st["ws"][r]] = False
            in_ws[p] = True
            st["ws"][r] = p
            side[r] = EQUAL if eq_all[p] else (LOWER if sigma > 0 else UPPER)
            since += 1
            if since >= self.refactor_every:
                since = 0
                try:
                    self._factor(st)
                except LpError:
                    # lost numerical rank: restart from the dual-feasible bound basis
                    st.update(self._cold(eq_all))
                    in_ws[:] = False
                    in_ws[st["ws"]] = True
                    bland = False
                    degenerate = 0
        x = st["x"]
        lam = st["lam"]
        ws = st["ws"]
        art_active = np.zeros(n, dtype=bool)
        for pos in np.flatnonzero(ws < n):
            j = ws[pos]
            on_art = (self._art_lo[j] and st["side"][pos] == LOWER) or (self._art_hi[j] and st["side"][pos] == UPPER)
            if on_art and abs(lam[pos]) > tol:
                art_active[j] = True
        basis = LpBasis(ws.copy(), st["side"].copy())
        if art_active.any():
            return LpResult("unbounded", x=x.copy(), iterations=it, basis=basis,
                            info={"artificial": np.flatnonzero(art_active)})
        row_duals = np.zeros(self.m)
        bound_duals = np.zeros(n)
        for pos, k in enumerate(ws):
            if k < n:
                bound_duals[k] = lam[pos]
            else:
                row_duals[k - n] = lam[pos]
        return LpResult("optimal", x=x.copy(), fun=float(self.c @ x), row_duals=row_duals,
                        bound_duals=bound_duals, iterations=it, basis=basis)


def lp_solve(c, A, row_lo, row_hi, lb, ub, basis: LpBasis | None = None, **kw) -> LpResult:
    """Solve ``min c.x`` s.t. ``row_lo <= A x <= row_hi`` and ``lb <= x <= ub``.

    Returns an :class:`LpResult` whose ``status`` is ``"optimal"``,
    ``"infeasible"`` or ``"unbounded"``. At an optimum, ``row_duals`` and
    ``bound_duals`` satisfy ``c = A.T @ row_duals + bound_duals`` with
    nonnegative multipliers on active lower sides and nonpositive ones on
    active upper sides.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float)) if not sp.issparse(A) else A
    c = np.asarray(c, dtype=float)
    if A.shape[0] == 0:
        A = np.zeros((0, c.size))
    return DualSimplex(c, A, row_lo, row_hi, **kw).solve(lb, ub, basis=basis)
