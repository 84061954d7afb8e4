import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import minimize_scalar
from hypothesis import given
from hypothesis import strategies as st

from atmoskit.dynamics import Disturbance, InertialParams, Model, RigidState, quat_from_axis_angle, quat_from_yaw, \
    quat_yaw
from atmoskit.nmpc import (Controller, DareError, OcpError, OcpProblem, Reference, Transcription, box_qp,
                           dare_terminal_weight, equilibrium_input, receding_horizon_step, solve, stage_cost,
                           state_error, state_error_jacobian, terminal_cost, terminal_error,
                           terminal_error_jacobian)

ORIGIN = RigidState().as_array()
small = st.floats(-1, 1).filter(lambda v: v == 0 or abs(v) > 1e-100)


# --- errors and costs ----------------------------------------------------

def test_state_error_examples():
    x = RigidState.planar(0.3, -0.2, 0.4, vx=0.1).as_array()
    assert np.array_equal(state_error(x, x, "da"), np.zeros(10))
    y = x.copy()
    y[6:10] *= -1
    assert np.array_equal(state_error(y, x, "wrench"), np.zeros(10))
    e = state_error(RigidState(q=quat_from_yaw(np.pi)).as_array(), ORIGIN, "da")
    assert e[-1] == pytest.approx(1.0, abs=1e-15)
    assert state_error(ORIGIN[:10], ORIGIN[:10], "rate").shape == (7,)


def test_state_error_signs():
    x = RigidState.planar(0.5, 0.0, 0.0).as_array()
    e = state_error(x, ORIGIN, "da")
    assert e[0] == -0.5


@pytest.mark.parametrize("kind", ["da", "rate"])
def test_error_jacobians_match_finite_differences(kind):
    rng = np.random.default_rng(0)
    nx = 10 if kind == "rate" else 13
    for _ in range(5):
        x = rng.normal(size=13)
        x[6:10] /= np.linalg.norm(x[6:10])
        xb = rng.normal(size=13)
        xb[6:10] /= np.linalg.norm(xb[6:10])
        x, xb = x[:nx], xb[:nx]
        h = 1e-6
        for fn, jac in ((state_error, state_error_jacobian), (terminal_error, terminal_error_jacobian)):
            J_fd = np.column_stack([(fn(x + h * e, xb, kind) - fn(x - h * e, xb, kind)) / (2 * h)
                                    for e in np.eye(nx)])
            assert np.allclose(jac(x, xb, kind), J_fd, atol=1e-8)


def test_costs():
    assert stage_cost(np.zeros(10), np.zeros(4), np.eye(10), np.eye(4)) == 0.0
    assert stage_cost(np.eye(10)[3], np.zeros(4), np.eye(10), np.eye(4)) == 1.0
    rng = np.random.default_rng(1)
    e, u = rng.normal(size=10), rng.normal(size=4)
    A, B = rng.normal(size=(10, 10)), rng.normal(size=(4, 4))
    Q, R = A @ A.T, B @ B.T + np.eye(4)
    expect = sum(e[i] * Q[i, j] * e[j] for i in range(10) for j in range(10)) + \
        sum(u[i] * R[i, j] * u[j] for i in range(4) for j in range(4))
    assert stage_cost(e, u, Q, R) == pytest.approx(expect, rel=1e-12)
    assert terminal_cost(e, Q) == pytest.approx(e @ Q @ e, rel=1e-12)
    with pytest.raises(OcpError):
        stage_cost(np.zeros(9), np.zeros(4), np.eye(10), np.eye(4))


@given(st.lists(small, min_size=10, max_size=10), st.lists(small, min_size=4, max_size=4))
def test_stage_cost_nonnegative(e, u):
    c = stage_cost(e, u, np.diag(np.arange(1.0, 11)), 0.1 * np.eye(4))
    assert c >= 0 and (c == 0) == (not any(e) and not any(u))


# --- DARE ----------------------------------------------------------------

def test_dare_scalar_against_value_iteration():
    dt = 0.1
    P, K = dare_terminal_weight([[1.0]], [[dt]], [[1.0]], [[1.0]])
    # brute-force value iteration on the scalar cost-to-go
    v = 0.0
    for _ in range(100_000):
        v_new = 1.0 + min_quadratic(v, dt)
        if abs(v_new - v) < 1e-15:
            break
        v = v_new
    closed = (dt * dt + np.sqrt(dt ** 4 + 4 * dt * dt)) / (2 * dt * dt)
    assert P[0, 0] == pytest.approx(v, abs=1e-8)
    assert P[0, 0] == pytest.approx(closed, abs=1e-8)
    assert abs(1 + dt * K[0, 0]) < 1


def min_quadratic(v, b):
    # min_u u^2 + v (x + b u)^2 at x = 1 by a derivative-free scalar search
    res = minimize_scalar(lambda u: u * u + v * (1 + b * u) ** 2, bracket=(-100.0, 0.0), tol=1e-12)
    return res.fun


def test_dare_zero_dynamics():
    Q = np.diag([1.0, 2.0])
    P, _ = dare_terminal_weight(np.zeros((2, 2)), np.ones((2, 1)), Q, [[1.0]])
    assert np.allclose(P, Q)


def test_dare_matrix_against_scipy_and_stable():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(4, 4)) * 0.6
    B = rng.normal(size=(4, 2))
    Q, R = np.eye(4), 0.5 * np.eye(2)
    P, K = dare_terminal_weight(A, B, Q, R)
    assert np.allclose(P, scipy.linalg.solve_discrete_are(A, B, Q, R), atol=1e-8)
    assert np.max(np.abs(np.linalg.eigvals(A + B @ K))) < 1


def test_dare_errors():
    with pytest.raises(DareError):
        dare_terminal_weight([[2.0]], [[0.0]], [[1.0]], [[1.0]], max_iter=500)
    with pytest.raises(OcpError):
        dare_terminal_weight([[1.0]], [[1.0]], [[1.0]], [[0.0]])


def test_problem_validation():
    with pytest.raises(OcpError):
        OcpProblem(N=1)
    with pytest.raises(OcpError):
        OcpProblem(f_max=-1.0)
    with pytest.raises(OcpError):
        OcpProblem(R=np.zeros(4))
    with pytest.raises(OcpError):
        OcpProblem(kind="thrust")


def test_equilibrium_input_cancels_disturbance():
    d = Disturbance(np.array([0.02, -0.01, 0.0]), np.array([0, 0, 0.003]))
    pr = OcpProblem(kind="wrench", disturbance=d)
    x = RigidState(q=quat_from_yaw(0.7)).as_array()
    u = equilibrium_input(pr, x)
    xd = pr.model.f(x, u)
    assert np.allclose(xd[3:6], 0, atol=1e-15) and np.allclose(xd[10:13], 0, atol=1e-15)


# --- box QP --------------------------------------------------------------

def test_box_qp_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = 5
        A = rng.normal(size=(n, n))
        H = A @ A.T + 0.1 * np.eye(n)
        g = rng.normal(size=n) * 3
        lo, hi = -np.ones(n), np.ones(n)
        x = box_qp(H, g, lo, hi)
        # KKT: projected gradient vanishes
        grad = H @ x + g
        pg = np.where(x <= lo + 1e-12, np.minimum(grad, 0), np.where(x >= hi - 1e-12, np.maximum(grad, 0), grad))
        assert np.max(np.abs(pg)) < 1e-9
        best = min(
            (0.5 * y @ H @ y + g @ y for y in (rng.uniform(lo, hi) for _ in range(2000))))
        assert 0.5 * x @ H @ x + g @ x <= best + 1e-12


# --- SQP -----------------------------------------------------------------

def test_setpoint_equilibrium():
    pr = OcpProblem("da")
    sol = solve(pr, ORIGIN, Reference.constant(ORIGIN, pr.N))
    assert np.max(np.abs(sol.U)) <= 1e-6 and sol.cost <= 1e-10 and sol.status == "optimal"


def _double_integrator_oracle(pr: OcpProblem, x0, Q_N):
    """Dense equality-constrained QP of one translational axis, solved through its KKT system."""
    m, dt, N = pr.params.mass, pr.dt, pr.N
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[dt * dt / (2 * m)], [dt / m]])
    Qa = np.diag([pr.Q[0, 0], pr.Q[3, 3]])
    Ra = pr.R[0, 0]
    nz = 2 * N + N
    H = np.zeros((nz, nz))
    for k in range(N):
        H[2 * k:2 * k + 2, 2 * k:2 * k + 2] = Q_N if k == N - 1 else Qa
        H[2 * N + k, 2 * N + k] = Ra
    C = np.zeros((2 * N, nz))
    b = np.zeros(2 * N)
    for k in range(N):
        C[2 * k:2 * k + 2, 2 * k:2 * k + 2] = -np.eye(2)
        C[2 * k:2 * k + 2, 2 * N + k] = B[:, 0]
        if k == 0:
            b[0:2] = -A @ x0
        else:
            C[2 * k:2 * k + 2, 2 * k - 2:2 * k] = A
    K = np.block([[2 * H, C.T], [C, np.zeros((2 * N, 2 * N))]])
    sol = np.linalg.solve(K, np.concatenate((np.zeros(nz), b)))
    return sol[2 * N:nz]


def test_unconstrained_ocp_matches_dense_kkt():
    Q_N = np.diag([40.0, 40, 40, 3, 3, 3, 10, 10, 10, 1, 1, 1])
    pr = OcpProblem("wrench", N=12, f_max=100.0, tau_max=100.0, Q_N=Q_N,
                    vel_box=np.array([[-50.0, 50]] * 3), workspace=np.array([[-50.0, 50]] * 3))
    x0 = RigidState.planar(1.0, -0.6, 0.0, vx=0.05).as_array()
    sol = solve(pr, x0, Reference.constant(ORIGIN, pr.N, "wrench"))
    assert sol.status == "optimal"
    QN2 = np.diag([40.0, 3.0])
    ux = _double_integrator_oracle(pr, x0[[0, 3]], QN2)
    uy = _double_integrator_oracle(pr, x0[[1, 4]], QN2)
    assert np.max(np.abs(sol.U[:, 0] - ux)) <= 1e-6
    assert np.max(np.abs(sol.U[:, 1] - uy)) <= 1e-6
    assert np.max(np.abs(sol.U[:, 2:])) <= 1e-9


def test_transcription_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for kind in ("da", "wrench", "rate"):
        pr = OcpProblem(kind, N=6)
        x0 = RigidState(p=[0.4, -0.3, 0], v=[0.1, 0, 0], q=quat_from_axis_angle([0.1, 0.2, 1], 0.5),
                        omega=[0, 0, 0.1]).as_array()
        ref = Reference.constant(RigidState.planar(1.0, 0.5, 0.3).as_array(), pr.N, kind)
        tr = Transcription(pr, x0, ref)
        X = np.vstack([x0[:pr.nx]] * (pr.N + 1)) + rng.normal(scale=0.2, size=(pr.N + 1, pr.nx))
        X[:, 6:10] /= np.linalg.norm(X[:, 6:10], axis=1)[:, None]
        U = rng.uniform(pr.u_lb, pr.u_ub, size=(pr.N, pr.nu))
        z = tr.pack(X, U)
        g = tr.gradient(z)
        h = 1e-6
        g_fd = np.array([(tr.objective(z + h * e) - tr.objective(z - h * e)) / (2 * h) for e in np.eye(z.size)])
        assert np.max(np.abs(g - g_fd)) / max(1.0, np.max(np.abs(g_fd))) <= 1e-5


def test_defect_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    pr = OcpProblem("wrench", N=4)
    tr = Transcription(pr, RigidState.planar(0.2, 0.1, 0.1).as_array(), Reference.constant(ORIGIN, 4, "wrench"))
    z = rng.normal(scale=0.3, size=4 * 13 + 4 * 6)
    J = tr.defect_jacobian(z)
    h = 1e-6
    J_fd = np.column_stack([(tr.defects(z + h * e) - tr.defects(z - h * e)) / (2 * h) for e in np.eye(z.size)])
    assert np.allclose(J, J_fd, atol=1e-7)


def test_wrench_force_bound():
    pr = OcpProblem("wrench", f_max=1.5)
    sol = solve(pr, RigidState.planar(-1.0).as_array(), Reference.constant(ORIGIN, pr.N, "wrench"))
    assert np.all(np.abs(sol.U[:, :3]) <= 1.5 + 1e-8)
    assert np.max(np.abs(sol.U[:, 0])) == pytest.approx(1.5, abs=1e-8)


@pytest.mark.parametrize("kind", ["da", "wrench", "rate"])
def test_solution_invariants(kind):
    pr = OcpProblem(kind)
    x0 = RigidState.planar(0.8, -0.5, 0.6, vx=0.05).as_array()
    sol = solve(pr, x0, Reference.constant(ORIGIN, pr.N, kind))
    assert sol.status == "optimal" and sol.kkt <= 1e-6
    Xn = np.array([pr.model.step(sol.X[k], sol.U[k], pr.dt) for k in range(pr.N)])
    assert np.max(np.abs(Xn - sol.X[1:])) <= 1e-6
    assert np.all(sol.U >= pr.u_lb - 1e-8) and np.all(sol.U <= pr.u_ub + 1e-8)


def test_cost_monotone_on_convex_instance():
    pr = OcpProblem("wrench", f_max=0.5)
    sol = solve(pr, RigidState.planar(1.0, 1.0).as_array(), Reference.constant(ORIGIN, pr.N, "wrench"))
    h = np.array(sol.history)
    assert np.all(np.diff(h) <= 1e-9 * h[:-1])


def test_quaternion_sign_invariance():
    pr = OcpProblem("da")
    x0 = RigidState.planar(0.5, -0.2, 0.4).as_array()
    ref = RigidState.planar(0.0, 0.0, -0.3).as_array()
    u = solve(pr, x0, Reference.constant(ref, pr.N)).U[0]
    x0n = x0.copy()
    x0n[6:10] *= -1
    refn = ref.copy()
    refn[6:10] *= -1
    assert np.allclose(solve(pr, x0n, Reference.constant(ref, pr.N)).U[0], u, atol=1e-6)
    assert np.allclose(solve(pr, x0, Reference.constant(refn, pr.N)).U[0], u, atol=1e-6)


def test_iteration_cap_reports_max_iter():
    pr = OcpProblem("da", max_iter=1)
    sol = solve(pr, RigidState.planar(1.0, 1.0, 1.0).as_array(), Reference.constant(ORIGIN, pr.N))
    assert sol.status == "max_iter" and sol.iterations == 1


def test_solve_errors():
    pr = OcpProblem("da")
    with pytest.raises(OcpError):
        solve(pr, np.full(13, np.nan), Reference.constant(ORIGIN, pr.N))
    with pytest.raises(OcpError):
        solve(pr, ORIGIN, Reference(np.zeros((pr.N + 1, 13))))
    sol = solve(pr, ORIGIN, Reference.constant(ORIGIN, pr.N))
    with pytest.raises(OcpError):
        solve(OcpProblem("da", N=5), ORIGIN, Reference.constant(ORIGIN, 5), warm_start=sol)


# --- receding horizon ----------------------------------------------------

def test_controller_at_reference_stays_quiet():
    c = Controller(OcpProblem("da"))
    for _ in range(5):
        assert np.max(np.abs(receding_horizon_step(c, ORIGIN, Reference.constant(ORIGIN, 15)))) <= 1e-6


def test_warm_start_shift():
    pr = OcpProblem("da")
    c = Controller(pr)
    x0 = RigidState.planar(1.0).as_array()
    ref = Reference.constant(ORIGIN, pr.N)
    u = c.step(x0, ref)
    first = c.solution
    shifted = first.shifted()
    assert np.array_equal(shifted.U[-1], first.U[-1]) and np.array_equal(shifted.U[0], first.U[1])
    x1 = pr.model.step(x0, u, pr.dt)
    c.step(x1, ref)
    assert c.solution.iterations <= first.iterations


def test_controller_holds_input_on_max_iter():
    c = Controller(OcpProblem("da"))
    x0 = RigidState.planar(1.0).as_array()
    ref = Reference.constant(ORIGIN, 15)
    u0 = c.step(x0, ref)
    c.problem.max_iter = 0
    u1 = c.step(RigidState.planar(-1.0, 1.0, 1.0).as_array(), ref)
    assert c.solution.status == "max_iter" and np.array_equal(u1, u0)


def test_closed_loop_one_metre_offset():
    pr = OcpProblem("da")
    c = Controller(pr)
    x = RigidState.planar(1.0).as_array()
    ref = Reference.constant(ORIGIN, pr.N)
    errs = []
    for _ in range(200):
        u = c.step(x, ref)
        x = pr.model.step(x, u, pr.dt)
        errs.append(np.linalg.norm(x[0:3]))
    assert errs[-1] < 0.05
    assert abs(quat_yaw(x[6:10])) < 1e-3
