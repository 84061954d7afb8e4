"""Plan synthesis: encode, solve, decode, sample and monitor."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import stl
from .bezier import BezierSegment, Trajectory, compose_trajectory
from .bnb import branch_and_bound
from .encode import MilpModel, PlanError, PlanScenario, encode_milp, static_rho_bound, top_clauses

SOLVERS = ("bnb", "highs")


class PlanInfeasible(PlanError):
    """No trajectory satisfies the specification; ``clauses`` conflict."""

    def __init__(self, clauses: Sequence[str], detail: str = ""):
        self.clauses = list(clauses)
        msg = "specification is infeasible; binding clause(s): " + "; ".join(self.clauses)
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass
class PlanResult:
    status: str
    rho: float
    monitored_rho: float
    trajectory: Trajectory
    t: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    signal: stl.SampledSignal
    stats: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    agent: str | None = None

    @property
    def segments(self):
        k = 0 if self.agent is None else self.trajectory.agent_names.index(self.agent)
        return self.trajectory.segments[k]

    def segments_block(self) -> dict:
        """Control points and knot times, ready for JSON serialization."""
        agents = self.trajectory.agent_names if self.agent is None else [self.agent]
        return {
            "knot_times": self.trajectory.knot_times.tolist(),
            "agents": {
                a: [{"index": s.index, "r": s.r.tolist(), "h": s.h.tolist()}
                    for s in self.trajectory.segments[self.trajectory.agent_names.index(a)]]
                for a in agents
            },
        }


def _as_formula(phi, scenario: PlanScenario):
    if isinstance(phi, str):
        return stl.parse_formula(phi, scenario.regions)
    return phi


def _solve_highs(model: MilpModel, node_cap: int):
    from scipy.optimize import Bounds, LinearConstraint, milp

    t0 = time.perf_counter()
    res = milp(model.c, constraints=LinearConstraint(model.A, model.row_lo, model.row_hi),
               integrality=model.integer.astype(int), bounds=Bounds(model.lb, model.ub),
               options={"disp": False, "node_limit": int(node_cap), "mip_rel_gap": 0.0})
    stats = {"solver": "highs", "nodes": int(getattr(res, "mip_node_count", 0) or 0),
             "lp_solves": None, "seconds": time.perf_counter() - t0}
    if res.x is None:
        return ("infeasible" if res.status == 2 else "node_cap"), None, stats
    bound = getattr(res, "mip_dual_bound", res.fun)
    stats["gap"] = float(max(0.0, res.fun - bound)) if bound is not None else None
    return ("optimal" if res.status == 0 else "node_cap"), res.x, stats


def solve_model(model: MilpModel, solver: str = "bnb", node_cap: int = 100_000):
    """Return ``(status, x, stats)`` for a MILP model."""
    if solver == "bnb":
        r = branch_and_bound(model, node_cap=node_cap)
        stats = {"solver": "bnb", "nodes": r.nodes, "lp_solves": r.lp_solves,
                 "lp_iterations": r.lp_iterations, "gap": r.gap, "seconds": r.seconds}
        return r.status, r.x, stats
    if solver == "highs":
        return _solve_highs(model, node_cap)
    raise PlanError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def decode(model: MilpModel, x) -> Trajectory:
    sc = model.scenario
    P, H = model.index["P"], model.index["H"]
    segs = []
    for a in sc.agents:
        segs.append([BezierSegment(x[P[a][i]], x[H[i]], index=i) for i in range(sc.n_segments)])
    return Trajectory(segs, agent_names=list(sc.agents))


def _signal(traj: Trajectory, sample_dt: float):
    t, pos, vel = compose_trajectory(traj, sample_dt)
    cols = {}
    for k, a in enumerate(traj.agent_names):
        cols[f"{a}_x"] = pos[:, k, 0]
        cols[f"{a}_y"] = pos[:, k, 1]
        cols[f"{a}_vx"] = vel[:, k, 0]
        cols[f"{a}_vy"] = vel[:, k, 1]
    return t, pos, vel, stl.SampledSignal(t, cols)


def _check_static(phi, scenario: PlanScenario):
    bad = [str(c) for c in top_clauses(phi) if static_rho_bound(c, scenario) < scenario.rho_min]
    if bad:
        raise PlanInfeasible(bad, "unreachable anywhere in the workspace")


def _feasible(clauses, scenario, solver, node_cap, min_sep) -> bool:
    phi = clauses[0] if len(clauses) == 1 else stl.And(tuple(clauses))
    try:
        model = encode_milp(phi, scenario, min_sep=min_sep)
    except PlanError:
        return False
    status, x, _ = solve_model(model, solver, node_cap)
    return x is not None


def binding_clauses(phi, scenario, solver="bnb", node_cap=100_000, min_sep=None) -> list[str]:
    """Deletion filter: a minimal subset of top-level clauses that is infeasible."""
    keep = list(top_clauses(phi))
    i = 0
    while i < len(keep):
        trial = keep[:i] + keep[i + 1:]
        if trial and not _feasible(trial, scenario, solver, node_cap, min_sep):
            keep = trial
        else:
            i += 1
    return [str(c) for c in keep]


def _finish(model, x, status, stats, phi, sample_dt, metadata=None) -> PlanResult:
    sc = model.scenario
    traj = decode(model, x)
    t, pos, vel, sig = _signal(traj, sample_dt)
    rho = float(x[model.index["rho"]])
    mon = stl.robustness(phi, sig, t=sc.t0)
    stats = dict(stats, binaries=model.n_binaries, rows=model.n_rows, variables=model.n_vars)
    return PlanResult(status, rho, float(mon), traj, t, pos, vel, sig, stats, dict(metadata or {}))


def plan(phi, scenario: PlanScenario, solver: str = "bnb", node_cap: int = 100_000,
         sample_dt: float = 0.1, tight_m: bool = False) -> PlanResult:
    """Synthesize a trajectory maximizing the robustness of ``phi``.

    Raises :class:`PlanInfeasible`, naming the conflicting clauses, when no
    trajectory reaches robustness ``scenario.rho_min``.
    """
    phi = _as_formula(phi, scenario)
    _check_static(phi, scenario)
    model = encode_milp(phi, scenario, tight_m=tight_m)
    status, x, stats = solve_model(model, solver, node_cap)
    if x is None:
        if status == "infeasible":
            raise PlanInfeasible(binding_clauses(phi, scenario, solver, node_cap))
        raise PlanError(f"no feasible plan found within {node_cap} nodes")
    return _finish(model, x, status, stats, phi, sample_dt)


def knot_separation(traj: Trajectory) -> float:
    """Smallest pairwise infinity-norm distance between agents at the knots."""
    pts = []
    for segs in traj.segments:
        pts.append(np.vstack([s.r[0] for s in segs] + [segs[-1].r[-1]]))
    best = np.inf
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            best = min(best, float(np.max(np.abs(pts[i] - pts[j]), axis=1).min()))
    return best


def merge_scenarios(scenarios: Sequence[PlanScenario]) -> PlanScenario:
    """Joint scenario of several single-agent scenarios on one time grid."""
    base = scenarios[0]
    start, goal, regions, obstacles = {}, {}, {}, []
    for sc in scenarios:
        for f in ("t0", "tf", "n_segments", "degree_r", "degree_h", "hdot_min_frac", "w_acc", "rho_min"):
            if getattr(sc, f) != getattr(base, f):
                raise PlanError(f"agent scenarios disagree on {f}")
        if not (np.array_equal(sc.workspace, base.workspace) and np.array_equal(sc.vmax, base.vmax)):
            raise PlanError("agent scenarios disagree on workspace or velocity box")
        for a in sc.agents:
            if a in start:
                raise PlanError(f"agent {a} appears twice")
            start[a], goal[a] = sc.start[a], sc.goal[a]
        for k, v in sc.regions.items():
            if k in regions and not np.array_equal(regions[k], v):
                raise PlanError(f"region {k} differs between agents")
            regions[k] = v
        obstacles += [o for o in sc.obstacles if o not in obstacles]
    return replace(base, regions=regions, start=start, goal=goal, obstacles=tuple(obstacles))


def plan_multi(specs, min_sep: float, solver: str = "highs", node_cap: int = 100_000,
               sample_dt: float = 0.1, tight_m: bool = False) -> list[PlanResult]:
    """Jointly plan several agents: ``specs`` is a list of ``(phi, scenario)``.

    The agents share the temporal curves, and their positions at the knots
    are kept at least ``min_sep`` apart in the infinity norm. Separation
    between knots is not enforced. Returns one result per agent; ``rho``
    is the joint robustness.
    """
    if min_sep < 0:
        raise PlanError("min_sep must be nonnegative")
    scenario = merge_scenarios([sc for _, sc in specs])
    parts = [_as_formula(p, scenario) for p, _ in specs]
    children = []
    for p in parts:
        children += top_clauses(p)
    phi = stl.And(tuple(children))
    _check_static(phi, scenario)
    model = encode_milp(phi, scenario, min_sep=min_sep, tight_m=tight_m)
    status, x, stats = solve_model(model, solver, node_cap)
    if x is None:
        if status == "infeasible":
            raise PlanInfeasible(binding_clauses(phi, scenario, solver, node_cap, min_sep))
        raise PlanError(f"no feasible plan found within {node_cap} nodes")
    joint = _finish(model, x, status, stats, phi, sample_dt)
    sep = knot_separation(joint.trajectory)
    out = []
    for (p, sc), formula in zip(specs, parts):
        (a,) = sc.agents
        meta = {"separation": "knots only", "min_sep": min_sep, "min_knot_separation": sep,
                "joint_monitored_rho": joint.monitored_rho}
        res = replace(joint, agent=a, monitored_rho=float(stl.robustness(formula, joint.signal, t=scenario.t0)),
                      metadata=meta)
        out.append(res)
    return out
