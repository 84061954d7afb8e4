import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from atmoskit import stl
from atmoskit.planner import (BezierError, BezierSegment, PlanError, PlanInfeasible, PlanScenario, Trajectory,
                              branch_and_bound, bezier_derivative, bezier_eval, compose_trajectory, encode_milp,
                              knot_separation, lp_solve, milp_census, plan, plan_multi)
from atmoskit.planner.bezier import elevate, elevation_matrix
from atmoskit.planner.plan import solve_model

REGIONS = {"B": [[0.25, 0.75], [-1.0, -0.5]], "C": [[0.25, 0.75], [0.5, 1.0]], "D": [[2.5, 3.0], [0.5, 1.0]],
           "Obs": [[1.25, 2.0], [-0.5, 0.5]]}
WORKSPACE = [[0.0, 3.5], [-1.5, 1.5]]


def _scenario(**kw):
    base = dict(workspace=WORKSPACE, regions=REGIONS, start={"p1": [0.5, -0.75]}, goal={"p1": [0.5, 0.75]},
                tf=60.0, n_segments=8, vmax=(0.2, 0.2))
    base.update(kw)
    return PlanScenario(**base)


# --- Bezier ---------------------------------------------------------------

points2d = st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=2, max_size=7)


@given(points2d)
def test_endpoint_interpolation(pts):
    P = np.array(pts)
    assert np.allclose(bezier_eval(P, 0.0), P[0]) and np.allclose(bezier_eval(P, 1.0), P[-1])


def test_degree_one_is_linear():
    P = np.array([[0.0, 1.0], [2.0, -3.0]])
    s = np.linspace(0, 1, 11)
    assert np.allclose(bezier_eval(P, s), (1 - s)[:, None] * P[0] + s[:, None] * P[1], atol=1e-15)


def test_bernstein_form_matches_de_casteljau():
    from math import comb
    rng = np.random.default_rng(0)
    P = rng.normal(size=(6, 2))
    s = rng.uniform(size=20)
    basis = np.column_stack([comb(5, k) * s ** k * (1 - s) ** (5 - k) for k in range(6)])
    assert np.allclose(bezier_eval(P, s), basis @ P, atol=1e-13)


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(6, 2))
    h = 1e-6
    for s in rng.uniform(0.01, 0.99, 20):
        fd = (bezier_eval(P, s + h) - bezier_eval(P, s - h)) / (2 * h)
        assert np.allclose(bezier_derivative(P, s), fd, atol=1e-6)


def test_parameter_range_checked():
    with pytest.raises(BezierError):
        bezier_eval([0.0, 1.0], 1.5)


@given(points2d, st.integers(1, 3))
def test_elevation_preserves_curve(pts, times):
    P = np.array(pts)
    E = elevate(P, times)
    s = np.linspace(0, 1, 7)
    assert np.allclose(bezier_eval(E, s), bezier_eval(P, s), atol=1e-9)
    d = len(pts) - 1
    assert np.allclose(elevation_matrix(d, d + times) @ P, E, atol=1e-12)


@given(points2d, st.floats(0, 1), st.floats(0, 2 * np.pi))
def test_convex_hull_property(pts, s, angle):
    P = np.array(pts)
    d = np.array([np.cos(angle), np.sin(angle)])
    assert bezier_eval(P, s) @ d <= np.max(P @ d) + 1e-9


def test_affine_time_single_segment():
    r = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    seg = BezierSegment(r, np.array([10.0, 15.0, 20.0]))
    t, pos, vel = compose_trajectory(Trajectory([[seg]]), 0.5)
    assert t[0] == 10.0 and t[-1] == 20.0
    s = (t - 10.0) / 10.0
    assert np.allclose(pos[:, 0], bezier_eval(r, s), atol=1e-9)
    assert np.allclose(pos[0, 0], r[0]) and np.allclose(pos[-1, 0], r[-1], atol=1e-9)


def test_velocity_chain_rule():
    rng = np.random.default_rng(2)
    r = rng.normal(size=(6, 2))
    h = np.array([0.0, 1.0, 3.5, 4.0])  # monotone, nonlinear
    seg = BezierSegment(r, h)
    t, pos, vel = compose_trajectory(Trajectory([[seg]]), 0.05)
    for k in range(1, t.size - 1, 7):
        s = seg.s_of_t(t[k])[0]
        assert abs(bezier_eval(h, s) - t[k]) < 1e-8
        expect = bezier_derivative(r, s) / bezier_derivative(h, s)
        assert np.allclose(vel[k, 0], expect, rtol=1e-6, atol=1e-8)


def test_non_monotone_time_rejected():
    seg = BezierSegment(np.zeros((3, 2)), np.array([0.0, 2.0, 1.0]))
    with pytest.raises(BezierError):
        compose_trajectory(Trajectory([[seg]]), 0.1)


# --- LP -------------------------------------------------------------------

def test_lp_trivial():
    r = lp_solve([-1.0], [[1.0]], [-np.inf], [3.0], [0.0], [np.inf])
    assert r.status == "optimal" and r.x[0] == pytest.approx(3.0)
    assert lp_solve([-1.0], [[1.0]], [-np.inf], [np.inf], [0.0], [np.inf]).status == "unbounded"
    assert lp_solve([1.0], [[1.0]], [2.0], [np.inf], [0.0], [1.0]).status == "infeasible"


def test_lp_textbook_vertex():
    # max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18, x, y >= 0
    A = np.array([[1.0, 0], [0, 2], [3, 2]])
    hi = np.array([4.0, 12, 18])
    r = lp_solve([-3.0, -5.0], A, np.full(3, -np.inf), hi, [0, 0], [np.inf, np.inf])
    best = None
    for rows in itertools.combinations(range(5), 2):
        G = np.vstack((A, -np.eye(2)))
        g = np.concatenate((hi, [0, 0]))
        try:
            v = np.linalg.solve(G[list(rows)], g[list(rows)])
        except np.linalg.LinAlgError:
            continue
        if np.all(G @ v <= g + 1e-9):
            val = 3 * v[0] + 5 * v[1]
            best = val if best is None else max(best, val)
    assert -r.fun == pytest.approx(best) == pytest.approx(36.0)
    assert np.allclose(r.x, [2.0, 6.0])


def test_lp_certificates_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(40):
        n, m = rng.integers(2, 9), rng.integers(1, 9)
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(-1, 1, n)
        lo = A @ x0 - rng.uniform(0, 1, m)
        hi = A @ x0 + rng.uniform(0, 1, m)
        lo[rng.uniform(size=m) < 0.3] = -np.inf
        c = rng.normal(size=n)
        r = lp_solve(c, A, lo, hi, -2 * np.ones(n), 2 * np.ones(n))
        ref = linprog(c, A_ub=np.vstack((A, -A[np.isfinite(lo)])),
                      b_ub=np.concatenate((hi, -lo[np.isfinite(lo)])), bounds=[(-2, 2)] * n)
        assert r.status == "optimal" and r.fun == pytest.approx(ref.fun, abs=1e-8)
        # dual feasibility and complementary slackness
        assert np.allclose(c, A.T @ r.row_duals + r.bound_duals, atol=1e-9)
        Ax = A @ r.x
        y, z = r.row_duals, r.bound_duals
        assert np.all((y <= 1e-9) | (np.abs(Ax - lo) <= 1e-7))
        assert np.all((y >= -1e-9) | (np.abs(Ax - hi) <= 1e-7))
        assert np.all((z <= 1e-9) | (np.abs(r.x + 2) <= 1e-7))
        assert np.all((z >= -1e-9) | (np.abs(r.x - 2) <= 1e-7))


# --- branch and bound ------------------------------------------------------

class _Milp:
    def __init__(self, c, A, row_lo, row_hi, lb, ub, integer):
        self.c, self.A, self.row_lo, self.row_hi = map(np.asarray, (c, A, row_lo, row_hi))
        self.lb, self.ub, self.integer = map(np.asarray, (lb, ub, integer))


def _enumerate(m):
    """Exhaustive oracle: one HiGHS LP per binary assignment."""
    ints = np.flatnonzero(m.integer)
    best = np.inf
    for bits in itertools.product((0.0, 1.0), repeat=ints.size):
        lb, ub = m.lb.astype(float).copy(), m.ub.astype(float).copy()
        lb[ints] = ub[ints] = bits
        fin_lo, fin_hi = np.isfinite(m.row_lo), np.isfinite(m.row_hi)
        res = linprog(m.c, A_ub=np.vstack((m.A[fin_hi], -m.A[fin_lo])),
                      b_ub=np.concatenate((m.row_hi[fin_hi], -m.row_lo[fin_lo])),
                      bounds=list(zip(lb, ub)), method="highs")
        if res.status == 0:
            best = min(best, res.fun)
    return best


def test_bnb_integral_root():
    m = _Milp([-1.0, -1.0], [[1.0, 1.0]], [-np.inf], [2.0], [0, 0], [1, 1], [True, True])
    r = branch_and_bound(m)
    assert r.status == "optimal" and r.fun == -2.0 and r.nodes == 1


def test_bnb_knapsack_against_enumeration():
    w = np.array([12.0, 2, 1, 1, 4])
    v = np.array([4.0, 2, 1, 2, 10])
    m = _Milp(-v, [w], [-np.inf], [15.0], np.zeros(5), np.ones(5), np.ones(5, bool))
    r = branch_and_bound(m)
    brute = min(-v @ np.array(b) for b in itertools.product((0, 1), repeat=5) if w @ np.array(b) <= 15)
    assert r.fun == pytest.approx(brute) == pytest.approx(-15.0)


@pytest.mark.parametrize("seed", range(6))
def test_bnb_random_mixed_instances_against_enumeration(seed):
    rng = np.random.default_rng(seed)
    nb, nc, m = 8, 3, 6
    n = nb + nc
    A = rng.normal(size=(m, n))
    x0 = np.concatenate((rng.integers(0, 2, nb), rng.uniform(-1, 1, nc)))
    hi = A @ x0 + rng.uniform(0, 0.5, m)
    lo = np.full(m, -np.inf)
    c = rng.normal(size=n)
    mm = _Milp(c, A, lo, hi, np.r_[np.zeros(nb), -3 * np.ones(nc)], np.r_[np.ones(nb), 3 * np.ones(nc)],
               np.r_[np.ones(nb, bool), np.zeros(nc, bool)])
    r = branch_and_bound(mm)
    assert r.status == "optimal"
    assert r.fun == pytest.approx(_enumerate(mm), abs=1e-7)


def test_bnb_node_cap_reports_gap():
    rng = np.random.default_rng(9)
    n = 30
    w, v = rng.uniform(1, 10, n), rng.uniform(1, 10, n)
    m = _Milp(-v, [w], [-np.inf], [w.sum() / 2], np.zeros(n), np.ones(n), np.ones(n, bool))
    r = branch_and_bound(m, node_cap=5)
    assert r.status == "node_cap" and r.nodes <= 5 and (r.x is None or r.gap >= 0)


def test_bnb_infeasible():
    m = _Milp([1.0], [[2.0]], [1.0], [1.0], [0], [1], [True])
    assert branch_and_bound(m).status == "infeasible"


# --- encoding -------------------------------------------------------------

def test_boundary_only_is_an_lp():
    sc = _scenario(n_segments=3)
    m = encode_milp(stl.Pred((("p1_x", 1.0),), 0.0), sc)
    assert m.n_binaries == 0
    status, x, _ = solve_model(m)
    assert status == "optimal" and x[m.index["rho"]] == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("N, K, L", [(1, 1, 0), (3, 1, 1), (4, 2, 1), (6, 0, 2)])
def test_census_formula(N, K, L):
    sc = _scenario(n_segments=N)
    parts = [f"F[0,60](p1 in {r})" for r in ("B", "C")[:K]] + [f"G[0,60](!(p1 in {r}))" for r in ("Obs", "D")[:L]]
    phi = stl.parse_formula(" & ".join(parts), REGIONS)
    m = encode_milp(phi, sc)
    census = milp_census(N, K, L)
    assert m.n_binaries == census["binaries"]
    assert m.n_vars - m.n_binaries == census["continuous"]
    assert m.n_rows == census["rows"]


def test_binaries_partitioned_into_groups():
    sc = _scenario(n_segments=4)
    phi = stl.parse_formula("F[10,30](p1 in B) & G[0,60](!(p1 in Obs)) & F[40,60](p1 in C)", REGIONS)
    m = encode_milp(phi, sc)
    members = [j for _, g in m.groups for j in g]
    assert sorted(members) == list(np.flatnonzero(m.integer))
    assert np.all(np.isfinite(m.A))


def test_obstacle_needs_a_side_selector():
    # two segments cannot detour with each hull on one side; three can
    sc = PlanScenario(workspace=[[-1.0, 3.0], [-1.0, 1.0]], regions={"Obs": [[0.8, 1.2], [-0.2, 0.6]]},
                      start={"p1": [0.0, 0.0]}, goal={"p1": [2.0, 0.0]}, tf=40.0, n_segments=3, vmax=(0.3, 0.3))
    phi = stl.parse_formula("G[0,40](!(p1 in Obs))", sc.regions)
    m = encode_milp(phi, sc)
    status, x, _ = solve_model(m)
    assert status == "optimal"
    for _, group in m.groups:
        assert np.sum(np.round(x[group])) >= 1
    ub = m.ub.copy()
    ub[m.integer] = 0.0
    lp = lp_solve(m.c, m.A, m.row_lo, m.row_hi, m.lb, ub)
    assert lp.status == "infeasible"


def test_empty_support_rejected():
    with pytest.raises(PlanError):
        encode_milp(stl.parse_formula("F[70,80](p1 in B)", REGIONS), _scenario())


def test_scenario_validation():
    with pytest.raises(PlanError):
        _scenario(tf=0.0)
    with pytest.raises(PlanError):
        _scenario(start={"p1": [1.5, 0.0]}, obstacles=("Obs",))
    with pytest.raises(PlanError):
        _scenario(workspace=[[0, np.inf], [0, 1]])


# --- planning -------------------------------------------------------------

SINGLE = "F[0,60](p1 in B) & F[0,60](p1 in D) & G[0,60](!(p1 in Obs))"


def test_single_agent_scenario():
    res = plan(SINGLE, _scenario())
    assert res.rho == pytest.approx(0.25, abs=1e-3)
    assert res.monitored_rho >= res.rho - 1e-3
    assert res.stats["gap"] <= 1e-6
    # trajectory starts and ends at the boundary states, at rest
    assert np.allclose(res.pos[0, 0], [0.5, -0.75]) and np.allclose(res.pos[-1, 0], [0.5, 0.75], atol=1e-9)
    assert np.allclose(res.vel[[0, -1], 0], 0.0, atol=1e-9)
    assert np.all(np.abs(res.vel) <= 0.2 + 1e-6)
    for segs in res.trajectory.segments:
        assert all(s.is_monotone() for s in segs)


def test_contradiction_is_infeasible():
    phi = "G[30,40](p1 in B) & G[30,40](p1 in D)"
    with pytest.raises(PlanInfeasible) as info:
        plan(phi, _scenario(n_segments=4))
    assert len(info.value.clauses) == 2


def test_scaling_doubles_robustness():
    def run(k):
        regions = {"R": np.array([[2.0, 3.0], [-0.5, 0.5]]) * k}
        sc = PlanScenario(workspace=np.array([[0.0, 4.0], [-2.0, 2.0]]) * k, regions=regions,
                          start={"p1": [0.5 * k, 0.0]}, goal={"p1": [0.5 * k, 0.5 * k]}, tf=60.0, n_segments=3,
                          vmax=(0.3 * k, 0.3 * k))
        return plan("F[0,60](p1 in R)", sc).rho

    assert run(2.0) == pytest.approx(2 * run(1.0), abs=1e-6)


def test_bnb_matches_highs_on_planning_model():
    sc = _scenario(n_segments=2)
    phi = stl.parse_formula("F[0,60](p1 in B) & G[0,60](!(p1 in Obs))", REGIONS)
    m = encode_milp(phi, sc)
    assert m.n_binaries <= 12
    _, xb, _ = solve_model(m, "bnb")
    _, xh, _ = solve_model(m, "highs")
    assert m.objective(xb) == pytest.approx(m.objective(xh), abs=1e-6)


def test_small_multi_agent_plan():
    s1 = PlanScenario(workspace=WORKSPACE, regions=REGIONS, start={"p1": [0.5, -0.75]}, goal={"p1": [0.5, 0.75]},
                      tf=60.0, n_segments=4, vmax=(0.25, 0.25))
    s2 = PlanScenario(workspace=WORKSPACE, regions=REGIONS, start={"p2": [0.5, 0.75]}, goal={"p2": [0.5, -0.75]},
                      tf=60.0, n_segments=4, vmax=(0.25, 0.25))
    out = plan_multi([("F[0,60](p1 in C)", s1), ("F[0,60](p2 in B)", s2)], min_sep=0.3)
    assert len(out) == 2
    assert knot_separation(out[0].trajectory) >= 0.3 - 1e-6
    assert out[0].rho == pytest.approx(0.25, abs=1e-3)
    assert out[0].metadata["separation"] == "knots only"
