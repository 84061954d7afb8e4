"""Best-first branch-and-bound over the bounded dual simplex.

Nodes are ordered by LP bound, ties by creation order. The most fractional
integer variable is branched on (lowest index among ties). After a node is
split, the better child is processed next from the factorized basis left
in place ("plunging"); the other child waits in the queue with its bound,
LP point and basis, so every queued node can be branched without solving
its LP again.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import DualSimplex, LpBasis


@dataclass
class BnbResult:
    status: str  # "optimal", "node_cap" or "infeasible"
    x: np.ndarray | None
    fun: float
    bound: float
    nodes: int = 0
    lp_solves: int = 0
    lp_iterations: int = 0
    seconds: float = 0.0
    incumbents: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        if self.x is None:
            return np.inf
        return max(0.0, self.fun - self.bound)


def _snapshot(solver):
    st = solver.state
    return {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in st.items()}


def branch_and_bound(milp, node_cap: int = 100_000, gap_tol: float = 1e-6, int_tol: float = 1e-6,
                     lp_tol: float = 1e-9) -> BnbResult:
    """Minimize ``milp.c @ x`` over the mixed-integer set of ``milp``.

    ``milp`` needs the attributes ``c, A, row_lo, row_hi, lb, ub, integer``
    (a :class:`~atmoskit.planner.encode.MilpModel` has them). Integer
    variables must have finite bounds. Returns the global optimum (gap at
    most ``gap_tol``) unless ``node_cap`` LP nodes are exhausted first, in
    which case the incumbent is returned with its gap.
    """
    t_start = time.perf_counter()
    integer = np.asarray(milp.integer, dtype=bool)
    ints = np.flatnonzero(integer)
    lb0 = np.asarray(milp.lb, dtype=float)
    ub0 = np.asarray(milp.ub, dtype=float)
    if not (np.all(np.isfinite(lb0[ints])) and np.all(np.isfinite(ub0[ints]))):
        raise ValueError("integer variables need finite bounds")
    lb0 = lb0.copy()
    ub0 = ub0.copy()
    lb0[ints] = np.ceil(lb0[ints] - int_tol)
    ub0[ints] = np.floor(ub0[ints] + int_tol)
    solver = DualSimplex(milp.c, milp.A, milp.row_lo, milp.row_hi, tol=lp_tol)
    stats = {"nodes": 0, "lp": 0, "it": 0}
    best_x = None
    best_f = np.inf
    incumbents = []
    counter = 0

    def run(lb, ub, basis=None, reuse=False):
        stats["lp"] += 1
        res = solver.solve(lb, ub, basis=basis, reuse=reuse)
        stats["it"] += res.iterations
        if res.status == "unbounded":
            raise ValueError("LP relaxation is unbounded")
        return res

    root = run(lb0, ub0)
    if root.status != "optimal":
        return BnbResult("infeasible", None, np.inf, np.inf, 1, stats["lp"], stats["it"],
                         time.perf_counter() - t_start)
    heap: list = []
    # current node: (bound, x, lb, ub); state of the solver matches it
    current = (root.fun, root.x, lb0, ub0)
    while True:
        if current is None:
            while heap and heap[0][0] >= best_f - gap_tol:
                heapq.heappop(heap)
            if not heap:
                break
            if stats["nodes"] >= node_cap:
                break
            bound, _, x, lb, ub, basis = heapq.heappop(heap)
            current = (bound, x, lb, ub)
            fresh = basis
        else:
            fresh = None
        bound, x, lb, ub = current
        current = None
        stats["nodes"] += 1
        if bound >= best_f - gap_tol:
            continue
        xi = x[ints]
        frac = np.abs(xi - np.round(xi))
        k = int(np.argmax(frac)) if ints.size else 0
        if not ints.size or frac[k] <= int_tol:
            xr = x.copy()
            xr[ints] = np.round(xi)
            best_x, best_f = xr, bound
            incumbents.append((stats["nodes"], bound))
            continue
        if stats["nodes"] >= node_cap:
            heapq.heappush(heap, (bound, counter, x, lb, ub, fresh))
            counter += 1
            break
        j = ints[k]
        if fresh is not None:
            solver.solve(lb, ub, basis=fresh)  # refactor the queued basis
        parent = _snapshot(solver)
        kids = []
        for side in (0, 1):
            clb, cub = lb.copy(), ub.copy()
            if side == 0:
                cub[j] = np.floor(x[j])
            else:
                clb[j] = np.ceil(x[j])
            solver.state = {k_: (v.copy() if isinstance(v, np.ndarray) else v) for k_, v in parent.items()}
            res = run(clb, cub, reuse=True)
            if res.status == "optimal" and res.fun < best_f - gap_tol:
                kids.append((res.fun, side, res.x, clb, cub, res.basis, _snapshot(solver)))
        if not kids:
            continue
        kids.sort(key=lambda kd: (kd[0], kd[1]))
        for kd in kids[1:]:
            heapq.heappush(heap, (kd[0], counter, kd[2], kd[3], kd[4], kd[5]))
            counter += 1
        f, _, xk, clb, cub, _, snap = kids[0]
        solver.state = snap
        current = (f, xk, clb, cub)
    open_bound = min([h[0] for h in heap], default=np.inf)
    bound = min(best_f, open_bound)
    if best_x is None:
        status = "infeasible" if not heap else "node_cap"
    else:
        status = "optimal" if best_f - bound <= gap_tol else "node_cap"
    return BnbResult(status, best_x, best_f, bound, stats["nodes"], stats["lp"], stats["it"],
                     time.perf_counter() - t_start, incumbents)
