"""Big-M MILP encoding of robustness-maximizing trajectory synthesis.

Each agent's path is a chain of ``N`` spatial Bézier curves of degree
``d_r`` in the plane; one chain of temporal Bézier curves of degree ``d_h``
is shared by all agents. Everything is expressed linearly in the control
points:

* workspace containment and predicates hold on a segment when they hold at
  all of its control points (convex hull);
* the velocity box holds when ``|r'_k| <= v_max * e_k`` for the control
  points ``r'_k`` of the spatial derivative and the control points ``e_k``
  of ``h'`` elevated to degree ``d_r - 1``;
* logical choices (Or bodies, Eventually segment assignment, escaping an
  Always window) use binaries combined with a big-M.

The objective minimized is ``-rho + w_acc * sum |second differences|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .. import stl
from .bezier import elevation_matrix


class PlanError(ValueError):
    pass


@dataclass
class PlanScenario:
    """Workspace, regions, boundary positions and discretization of a plan.

    ``start`` and ``goal`` map agent names (the vector prefix used in the
    formula, e.g. ``"p1"``) to planar positions; boundary velocities are zero.
    """

    workspace: np.ndarray
    regions: Mapping[str, np.ndarray]
    start: Mapping[str, Sequence[float]]
    goal: Mapping[str, Sequence[float]]
    t0: float = 0.0
    tf: float = 60.0
    vmax: Sequence[float] = (0.2, 0.2)
    n_segments: int = 8
    degree_r: int = 5
    degree_h: int = 3
    obstacles: Sequence[str] = ()
    hdot_min_frac: float = 0.1
    w_acc: float = 1e-3
    rho_min: float = 0.0

    def __post_init__(self):
        self.workspace = np.asarray(self.workspace, dtype=float).reshape(2, 2)
        self.regions = {k: np.asarray(v, dtype=float).reshape(2, 2) for k, v in self.regions.items()}
        self.start = {k: np.asarray(v, dtype=float) for k, v in self.start.items()}
        self.goal = {k: np.asarray(v, dtype=float) for k, v in self.goal.items()}
        self.vmax = np.asarray(self.vmax, dtype=float)
        if not np.all(np.isfinite(self.workspace)):
            raise PlanError("workspace must be a bounded box (big-M would be unbounded)")
        if np.any(self.workspace[:, 1] <= self.workspace[:, 0]):
            raise PlanError("workspace box is empty")
        if not self.t0 < self.tf:
            raise PlanError("need t0 < tf")
        if self.n_segments < 1:
            raise PlanError("need at least one segment")
        if self.degree_h > self.degree_r or self.degree_h < 1 or self.degree_r < 2:
            raise PlanError("need 1 <= degree_h <= degree_r and degree_r >= 2")
        if np.any(self.vmax <= 0):
            raise PlanError("velocity bounds must be positive")
        if not 0.0 < self.hdot_min_frac < 1.0:
            raise PlanError("hdot_min_frac must lie in (0, 1)")
        if set(self.start) != set(self.goal) or not self.start:
            raise PlanError("start and goal must name the same agents")
        for name in self.obstacles:
            if name not in self.regions:
                raise PlanError(f"unknown obstacle region {name!r}")
        for kind, pts in (("start", self.start), ("goal", self.goal)):
            for a, p in pts.items():
                if p.shape != (2,) or not self._free(p):
                    raise PlanError(f"{kind} of {a} is outside the free workspace")

    def _free(self, p) -> bool:
        W = self.workspace
        if np.any(p < W[:, 0]) or np.any(p > W[:, 1]):
            return False
        for name in self.obstacles:
            B = self.regions[name]
            if np.all(p > B[:, 0]) and np.all(p < B[:, 1]):
                return False
        return True

    @property
    def agents(self) -> list[str]:
        return list(self.start)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.diff(self.workspace, axis=1)))

    @property
    def big_m(self) -> float:
        return 2.0 * self.diameter + 1.0

    @property
    def big_m_time(self) -> float:
        return 2.0 * (self.tf - self.t0) + 1.0


@dataclass
class MilpModel:
    """``min c.x`` s.t. ``row_lo <= A x <= row_hi``, ``lb <= x <= ub``,
    ``x_j`` integer where ``integer[j]``.
    """

    c: np.ndarray
    A: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    var_names: list[str]
    row_tags: list[str]
    groups: list[tuple[str, list[int]]] = field(default_factory=list)
    index: dict = field(default_factory=dict)
    scenario: PlanScenario | None = None
    clauses: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.row_lo.size

    @property
    def n_binaries(self) -> int:
        return int(self.integer.sum())

    def objective(self, x) -> float:
        return float(self.c @ x)

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        Ax = self.A @ x
        ok = np.all(Ax >= self.row_lo - tol) and np.all(Ax <= self.row_hi + tol)
        ok &= np.all(x >= self.lb - tol) and np.all(x <= self.ub + tol)
        xi = x[self.integer]
        return bool(ok and np.all(np.abs(xi - np.round(xi)) <= tol))


class _Builder:
    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[bool] = []
        self.rows: list[dict] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.tags: list[str] = []
        self.groups: list[tuple[str, list[int]]] = []

    def var(self, name, lb, ub, integer=False) -> int:
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.integer.append(integer)
        return len(self.names) - 1

    def binary(self, name) -> int:
        return self.var(name, 0.0, 1.0, integer=True)

    def row(self, coefs: Mapping[int, float], lo=-np.inf, hi=np.inf, tag=""):
        merged: dict[int, float] = {}
        for j, v in coefs.items():
            merged[j] = merged.get(j, 0.0) + v
        self.rows.append(merged)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.tags.append(tag)

    def build(self, c: Mapping[int, float]) -> MilpModel:
        n = len(self.names)
        A = np.zeros((len(self.rows), n))
        for i, r in enumerate(self.rows):
            for j, v in r.items():
                A[i, j] = v
        cv = np.zeros(n)
        for j, v in c.items():
            cv[j] = v
        return MilpModel(c=cv, A=A, row_lo=np.array(self.lo), row_hi=np.array(self.hi),
                         lb=np.array(self.lb), ub=np.array(self.ub),
                         integer=np.array(self.integer, dtype=bool), var_names=list(self.names),
                         row_tags=list(self.tags), groups=list(self.groups))


def _split_name(name: str, agents) -> tuple[str, int]:
    base, _, axis = name.rpartition("_")
    if base not in agents or axis not in ("x", "y"):
        raise PlanError(f"signal {name!r} is not a planar position of a planned agent")
    return base, "xy".index(axis)


def _dnf_free_body(node):
    """Normalize NegPred leaves to Pred (robustness -mu is again affine)."""
    if isinstance(node, stl.NegPred):
        return node.pred.negated()
    if isinstance(node, stl.Pred):
        return node
    if isinstance(node, (stl.And, stl.Or)):
        return type(node)(tuple(_dnf_free_body(c) for c in node.children))
    raise PlanError(f"unsupported formula node {node!r}")


class _Encoder:
    def __init__(self, scenario: PlanScenario, b: _Builder, tight_m=False):
        self.tight_m = tight_m
        self.sc = scenario
        self.b = b
        sc = scenario
        N, dr, dh = sc.n_segments, sc.degree_r, sc.degree_h
        self.agents = sc.agents
        self.M = sc.big_m
        self.Mt = sc.big_m_time
        W = sc.workspace
        self.delta = sc.hdot_min_frac * (sc.tf - sc.t0) / (dh * N)
        # spatial control points, knots shared between neighbouring segments
        self.P = {}
        for a in self.agents:
            idx = np.empty((N, dr + 1, 2), dtype=int)
            for i in range(N):
                for k in range(dr + 1):
                    for d in range(2):
                        if i > 0 and k == 0:
                            idx[i, 0, d] = idx[i - 1, dr, d]
                            continue
                        lo, hi = W[d]
                        fixed = None
                        if i == 0 and k <= 1:
                            fixed = sc.start[a][d]
                        elif i == N - 1 and k >= dr - 1:
                            fixed = sc.goal[a][d]
                        if fixed is not None:
                            lo = hi = fixed
                        idx[i, k, d] = b.var(f"{a}[{i},{k}]{'xy'[d]}", lo, hi)
            self.P[a] = idx
        # temporal control points
        H = np.empty((N, dh + 1), dtype=int)
        total = dh * N
        for i in range(N):
            for k in range(dh + 1):
                if i > 0 and k == 0:
                    H[i, 0] = H[i - 1, dh]
                    continue
                g = dh * i + k
                lo = sc.t0 + g * self.delta
                hi = sc.tf - (total - g) * self.delta
                if g == 0:
                    lo = hi = sc.t0
                elif g == total:
                    lo = hi = sc.tf
                H[i, k] = b.var(f"h[{i},{k}]", lo, hi)
        self.H = H
        self.h_lo = np.array([[b.lb[H[i, k]] for k in range(dh + 1)] for i in range(N)])
        self.h_hi = np.array([[b.ub[H[i, k]] for k in range(dh + 1)] for i in range(N)])
        self.rho = b.var("rho", sc.rho_min, np.inf)
        self.acc = []

    # -- kinematic constraints -------------------------------------------------
    def kinematics(self):
        sc, b = self.sc, self.b
        N, dr, dh = sc.n_segments, sc.degree_r, sc.degree_h
        H = self.H
        for i in range(N - 1):
            for a in self.agents:
                P = self.P[a]
                for d in range(2):
                    b.row({P[i, dr, d]: 2.0, P[i, dr - 1, d]: -1.0, P[i + 1, 1, d]: -1.0}, 0.0, 0.0, "c1")
            b.row({H[i, dh]: 2.0, H[i, dh - 1]: -1.0, H[i + 1, 1]: -1.0}, 0.0, 0.0, "c1")
        for i in range(N):
            for k in range(dh):
                b.row({H[i, k + 1]: 1.0, H[i, k]: -1.0}, self.delta, np.inf, "monotone")
        # |d_r (P_{k+1} - P_k)| <= vmax * e_k(h'), e = E @ (d_h * diff(h))
        E = elevation_matrix(dh - 1, dr - 1)
        for i in range(N):
            for k in range(dr):
                hcoef: dict[int, float] = {}
                for j in range(dh):
                    w = E[k, j] * dh
                    hcoef[H[i, j + 1]] = hcoef.get(H[i, j + 1], 0.0) + w
                    hcoef[H[i, j]] = hcoef.get(H[i, j], 0.0) - w
                for a in self.agents:
                    P = self.P[a]
                    for d in range(2):
                        vm = sc.vmax[d]
                        for sgn in (1.0, -1.0):
                            r = {P[i, k + 1, d]: sgn * dr, P[i, k, d]: -sgn * dr}
                            for j, w in hcoef.items():
                                r[j] = r.get(j, 0.0) - vm * w
                            b.row(r, -np.inf, 0.0, "velocity")
        # acceleration magnitude |P_{k+2} - 2 P_{k+1} + P_k| <= acc
        W = sc.workspace
        for a in self.agents:
            P = self.P[a]
            for i in range(N):
                for k in range(dr - 1):
                    for d in range(2):
                        j = b.var(f"acc_{a}[{i},{k}]{'xy'[d]}", 0.0, 4.0 * (W[d, 1] - W[d, 0]))
                        self.acc.append(j)
                        for sgn in (1.0, -1.0):
                            b.row({j: 1.0, P[i, k + 2, d]: -sgn, P[i, k + 1, d]: 2.0 * sgn,
                                   P[i, k, d]: -sgn}, 0.0, np.inf, "acceleration")

    # -- logic -----------------------------------------------------------------
    def _act_row(self, binaries, act, tag):
        """``sum(binaries) >= 1`` when every literal in ``act`` is on."""
        r = {j: 1.0 for j in binaries}
        for j in act:
            r[j] = r.get(j, 0.0) - 1.0
        self.b.row(r, 1.0 - len(act), np.inf, tag)
        self.b.groups.append((tag, list(binaries)))

    def _pred_row(self, pred: stl.Pred, cps: Mapping[str, Sequence[int]], z, act, tag):
        """``mu(x) >= z`` relaxed by ``M`` unless all of ``act`` are on."""
        r: dict[int, float] = {}
        for name, coef in pred.coefs:
            a, d = _split_name(name, self.agents)
            j = cps[a][d]
            r[j] = r.get(j, 0.0) + coef
        M = self.M
        if act:
            lb, ub = self.b.lb, self.b.ub
            low = pred.const + sum(min(v * lb[j], v * ub[j]) for j, v in r.items())
            need = (self.rho_ub if z is not None else 0.0) - low
            if not np.isfinite(need) or need > M:
                raise PlanError(f"big-M {M:.3g} cannot relax predicate {pred} (needs {need:.3g})")
            if self.tight_m:
                if need <= 0.0:
                    return
                M = need
        if z is not None:
            r[z] = r.get(z, 0.0) - 1.0
        for j in act:
            r[j] = r.get(j, 0.0) - M
        self.b.row(r, -pred.const - M * len(act), np.inf, tag)

    def _time_rows(self, seg_lo, seg_hi, e, a_, b_, tag):
        """Link ``e`` to ``[h(seg_lo), h(seg_hi)]`` touching ``[a_, b_]``."""
        b, H = self.b, self.H
        i0, k0 = seg_lo
        i1, k1 = seg_hi
        need = self.h_hi[i0, k0] - b_
        if need > 0:
            M = need if self.tight_m else self.Mt
            b.row({H[i0, k0]: 1.0, e: M}, -np.inf, b_ + M, tag)
        need = a_ - self.h_lo[i1, k1]
        if need > 0:
            M = need if self.tight_m else self.Mt
            b.row({H[i1, k1]: 1.0, e: -M}, a_ - M, np.inf, tag)

    def hold(self, node, seg: int, z, act, tag):
        """Encode ``node`` with margin ``z`` on every control point of ``seg``."""
        points = range(self.sc.degree_r + 1)
        if isinstance(node, stl.Pred):
            names = {_split_name(n, self.agents)[0] for n, _ in node.coefs}
            for k in points:
                cps = {a: self.P[a][seg, k] for a in names}
                self._pred_row(node, cps, z, act, tag)
        elif isinstance(node, stl.And):
            for c in node.children:
                self.hold(c, seg, z, act, tag)
        elif isinstance(node, stl.Or):
            ys = [self.b.binary(f"or[{tag}|{seg}]{m}") for m in range(len(node.children))]
            self._act_row(ys, act, tag)
            for y, c in zip(ys, node.children):
                self.hold(c, seg, z, list(act) + [y], tag)
        else:
            raise PlanError(f"unsupported body {node!r}")

    def segment_may_touch(self, seg, a, b_) -> bool:
        dh = self.sc.degree_h
        return self.h_lo[seg, 0] <= b_ and self.h_hi[seg, dh] >= a

    def encode(self, node, z, act, tag):
        sc, b = self.sc, self.b
        N, dh = sc.n_segments, sc.degree_h
        H = self.H
        if isinstance(node, stl.And):
            for c in node.children:
                self.encode(c, z, act, tag)
        elif isinstance(node, stl.Or):
            ys = [b.binary(f"or[{tag}]{m}") for m in range(len(node.children))]
            self._act_row(ys, act, tag)
            for y, c in zip(ys, node.children):
                self.encode(c, z, list(act) + [y], tag)
        elif isinstance(node, (stl.Pred, stl.NegPred)):
            pred = _dnf_free_body(node)
            names = {_split_name(n, self.agents)[0] for n, _ in pred.coefs}
            self._pred_row(pred, {a: self.P[a][0, 0] for a in names}, z, act, tag)
        elif isinstance(node, stl.Always):
            body = _dnf_free_body(node.body)
            if isinstance(body, stl.And):
                for c in body.children:
                    self.encode(stl.Always(node.interval, c), z, act, tag)
                return
            a_, b_ = (sc.t0 + v for v in node.interval)
            for seg in range(N):
                if not self.segment_may_touch(seg, a_, b_):
                    continue
                can_before = self.h_lo[seg, dh] <= a_ and a_ > sc.t0
                can_after = self.h_hi[seg, 0] >= b_ and b_ < sc.tf
                if not (can_before or can_after):
                    self.hold(body, seg, z, act, tag)
                    continue
                on = b.binary(f"active[{tag}|{seg}]")
                group = [on]
                if can_before:
                    y = b.binary(f"before[{tag}|{seg}]")
                    M = self.h_hi[seg, dh] - a_ if self.tight_m else self.Mt
                    b.row({H[seg, dh]: 1.0, y: M}, -np.inf, a_ + M, tag)
                    group.append(y)
                if can_after:
                    y = b.binary(f"after[{tag}|{seg}]")
                    M = b_ - self.h_lo[seg, 0] if self.tight_m else self.Mt
                    b.row({H[seg, 0]: 1.0, y: -M}, b_ - M, np.inf, tag)
                    group.append(y)
                self._act_row(group, act, tag)
                self.hold(body, seg, z, list(act) + [on], tag)
        elif isinstance(node, stl.Eventually):
            body = _dnf_free_body(node.body)
            if isinstance(body, stl.Or):
                self.encode(stl.Or(tuple(stl.Eventually(node.interval, c) for c in body.children)),
                            z, act, tag)
                return
            a_, b_ = (sc.t0 + v for v in node.interval)
            cand = [s for s in range(N) if self.segment_may_touch(s, a_, b_)]
            if not cand:
                raise PlanError(f"clause {tag} has an empty time support within the horizon")
            es = [b.binary(f"ev[{tag}|{s}]") for s in cand]
            self._act_row(es, act, tag)
            for seg, e in zip(cand, es):
                self._time_rows((seg, 0), (seg, dh), e, a_, b_, tag)
                self.hold(body, seg, z, list(act) + [e], tag)
        else:
            raise PlanError(f"unsupported formula node {node!r}")

    def hard_obstacles(self):
        sc = self.sc
        for name in sc.obstacles:
            for a in self.agents:
                avoid = stl.negate(stl.And(tuple(stl.box_predicates(a, sc.regions[name]))))
                for seg in range(sc.n_segments):
                    self.hold(_dnf_free_body(avoid), seg, None, [], f"obstacle {name}/{a}")

    def separation(self, min_sep: float):
        sc, b = self.sc, self.b
        N, dr = sc.n_segments, sc.degree_r
        for a1, a2 in combinations(self.agents, 2):
            for kn in range(N + 1):
                p1 = self.P[a1][kn, 0] if kn < N else self.P[a1][N - 1, dr]
                p2 = self.P[a2][kn, 0] if kn < N else self.P[a2][N - 1, dr]
                if kn in (0, N):
                    x1 = sc.start[a1] if kn == 0 else sc.goal[a1]
                    x2 = sc.start[a2] if kn == 0 else sc.goal[a2]
                    if np.max(np.abs(x1 - x2)) < min_sep:
                        raise PlanError(f"boundary positions of {a1} and {a2} violate the separation")
                    continue
                tag = f"separation {a1}/{a2}@{kn}"
                ys = []
                for d in range(2):
                    for sgn in (1.0, -1.0):
                        y = b.binary(f"sep[{a1},{a2}|{kn}]{'xy'[d]}{'+' if sgn > 0 else '-'}")
                        ys.append(y)
                        M = self.M
                        if self.tight_m:
                            lb, ub = b.lb, b.ub
                            low = min(sgn * lb[p1[d]], sgn * ub[p1[d]]) - max(sgn * lb[p2[d]], sgn * ub[p2[d]])
                            M = min_sep - low
                        b.row({p1[d]: sgn, p2[d]: -sgn, y: -M}, min_sep - M, np.inf, tag)
                b.row({y: 1.0 for y in ys}, 1.0, np.inf, tag)
                b.groups.append((tag, ys))


def static_rho_bound(phi, scenario: PlanScenario) -> float:
    """Upper bound on the robustness of ``phi`` ignoring time and dynamics.

    Temporal bodies are bounded by the best margin attainable anywhere in the
    workspace; this is a valid cut for the MILP's ``rho``.
    """
    from .lp import lp_solve

    agents = scenario.agents
    W = scenario.workspace

    def conj_bound(preds):
        # max z s.t. z <= mu_j(x), x in W^agents
        n = 2 * len(agents) + 1
        A = np.zeros((len(preds), n))
        lo = np.zeros(len(preds))
        for r, p in enumerate(preds):
            for name, coef in p.coefs:
                a, d = _split_name(name, agents)
                A[r, 2 * agents.index(a) + d] += coef
            A[r, -1] = -1.0
            lo[r] = -p.const
        lb = np.concatenate([np.tile(W[:, 0], len(agents)), [-np.inf]])
        ub = np.concatenate([np.tile(W[:, 1], len(agents)), [np.inf]])
        c = np.zeros(n)
        c[-1] = -1.0
        res = lp_solve(c, A, lo, np.full(len(preds), np.inf), lb, ub)
        return -res.fun if res.status == "optimal" else -np.inf

    def body(node):
        if isinstance(node, stl.Pred):
            return conj_bound([node])
        if isinstance(node, stl.Or):
            return max(body(c) for c in node.children)
        if isinstance(node, stl.And):
            if all(isinstance(c, stl.Pred) for c in node.children):
                return conj_bound(list(node.children))
            return min(body(c) for c in node.children)
        raise PlanError(f"unsupported body {node!r}")

    def rec(node):
        if isinstance(node, stl.And):
            return min(rec(c) for c in node.children)
        if isinstance(node, stl.Or):
            return max(rec(c) for c in node.children)
        if isinstance(node, (stl.Pred, stl.NegPred)):
            p = _dnf_free_body(node)
            x = {}
            for a in agents:
                x[f"{a}_x"], x[f"{a}_y"] = scenario.start[a]
            return p.const + sum(coef * x[n] for n, coef in p.coefs)
        if isinstance(node, (stl.Eventually, stl.Always)):
            return body(_dnf_free_body(node.body))
        raise PlanError(f"unsupported formula node {node!r}")

    return float(rec(phi))


def top_clauses(phi) -> list:
    return list(phi.children) if isinstance(phi, stl.And) else [phi]


def encode_milp(phi, scenario: PlanScenario, min_sep: float | None = None,
                tight_m: bool = False) -> MilpModel:
    """Encode robustness maximization of ``phi`` over ``scenario``.

    Variable and row census for one agent, ``N`` segments, degrees 5/3,
    ``K`` reach clauses ``F[a,b](p in box)`` and ``L`` avoid clauses
    ``G[a,b](!(p in box))`` whose windows contain ``[t0, tf]``::

        continuous = 21 N + 4           (2 (5N + 1) points, 3N + 1 times,
                                         8N acceleration bounds, rho)
        binaries   = (K + 4 L) N
        rows       = 3 (N - 1) + 3 N + 20 N + 16 N      (C1, monotone time,
                                                         velocity, |accel|)
                     + K (24 N + 1) + L (25 N)
    """
    stl.validate_fragment(phi)
    for node in top_clauses(phi):
        for t in stl.formula_intervals(node):
            if t[1] < 0.0 or t[0] > scenario.tf - scenario.t0:
                raise PlanError(f"clause {node} has an empty time support within the horizon")
    b = _Builder()
    enc = _Encoder(scenario, b, tight_m)
    enc.rho_ub = static_rho_bound(phi, scenario)
    if enc.rho_ub < scenario.rho_min:
        raise PlanError(f"specification cannot reach robustness {scenario.rho_min} anywhere "
                        f"in the workspace (bound {enc.rho_ub:.4g})")
    b.ub[enc.rho] = enc.rho_ub
    enc.kinematics()
    clauses = []
    for node in top_clauses(phi):
        tag = str(node)
        clauses.append(tag)
        enc.encode(node, enc.rho, [], tag)
    enc.hard_obstacles()
    if min_sep is not None and len(enc.agents) > 1:
        enc.separation(min_sep)
    c = {enc.rho: -1.0}
    for j in enc.acc:
        c[j] = scenario.w_acc
    model = b.build(c)
    model.index = {"P": enc.P, "H": enc.H, "rho": enc.rho, "acc": enc.acc}
    model.scenario = scenario
    model.clauses = clauses
    return model


def milp_census(n_segments: int, n_reach: int, n_avoid: int) -> dict:
    """Closed-form size of :func:`encode_milp` (see its docstring)."""
    N = n_segments
    return {
        "continuous": 21 * N + 4,
        "binaries": (n_reach + 4 * n_avoid) * N,
        "rows": 3 * (N - 1) + 3 * N + 20 * N + 16 * N + n_reach * (24 * N + 1) + n_avoid * 25 * N,
    }
