"""Receding-horizon control by Gauss-Newton SQP over direct multiple shooting.

The decision variables are the shooting nodes ``x(1..N)`` and the inputs
``u(0..N-1)``; ``x(0)`` is pinned to the measurement. Every SQP iterate
linearizes the RK4 map, condenses the node increments onto the input
increments and solves a strictly convex box-constrained QP with a primal
active-set method. State constraints enter as quadratic penalties, so the
QP is always feasible. An l1 merit function with Armijo backtracking
globalizes the iteration.

Error conventions
-----------------
The stage error is ``x_ref - x`` on position, velocity and (except for the
rate model) angular velocity, followed by the scalar ``1 - (q_ref . q)^2``.
The terminal error lives in tangent coordinates, with the attitude part
``-2 sign(q_ref . q) Im(q_ref^* q)``, so that the Riccati weight of the
linearized system applies to it directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    MODEL_KINDS, Disturbance, InertialParams, Model, RigidState, ZERO_DISTURBANCE,
    quat_to_rotmat,
)

ERROR_DIMS = {"da": 10, "wrench": 10, "rate": 7}
TANGENT_DIMS = {"da": 12, "wrench": 12, "rate": 9}
STATUSES = ("optimal", "max_iter")


class OcpError(ValueError):
    pass


class DareError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# errors and costs


def _state_array(x, kind: str) -> np.ndarray:
    if isinstance(x, RigidState):
        x = x.as_array()
    x = np.asarray(x, dtype=float).ravel()
    nx = 10 if kind == "rate" else 13
    if x.shape[0] == 13 and nx == 10:
        x = x[:10]
    if x.shape != (nx,):
        raise OcpError(f"state of a {kind} model needs {nx} entries, got {x.shape[0]}")
    return x


def state_error(x, xbar, kind: str) -> np.ndarray:
    """Stage error ``e`` of ``x`` with respect to the reference ``xbar``.

    Returns 10 entries ``[dp, dv, dw, att]`` for the ``da`` and ``wrench``
    models and 7 entries ``[dp, dv, att]`` for the ``rate`` model, where the
    differences are ``xbar - x`` and ``att = 1 - (qbar . q)^2``.
    """
    x = _state_array(x, kind)
    xbar = _state_array(xbar, kind)
    r = float(xbar[6:10] @ x[6:10])
    parts = [xbar[0:6] - x[0:6]]
    if kind != "rate":
        parts.append(xbar[10:13] - x[10:13])
    parts.append([1.0 - r * r])
    return np.concatenate(parts)


def state_error_jacobian(x, xbar, kind: str) -> np.ndarray:
    """Derivative of :func:`state_error` with respect to ``x``.

    The attitude row is the exact gradient ``-2 r qbar`` of ``1 - r^2``
    with ``r = qbar . q``; no surrogate residual is used.
    """
    x = _state_array(x, kind)
    xbar = _state_array(xbar, kind)
    nx = x.shape[0]
    ne = ERROR_DIMS[kind]
    E = np.zeros((ne, nx))
    E[0:6, 0:6] = -np.eye(6)
    if kind != "rate":
        E[6:9, 10:13] = -np.eye(3)
    r = float(xbar[6:10] @ x[6:10])
    E[-1, 6:10] = -2.0 * r * xbar[6:10]
    return E


def _check_weight(W, n: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    if W.shape != (n, n):
        raise OcpError(f"{name} must be {n}x{n}, got {W.shape}")
    return W


def stage_cost(e, u, Q, R) -> float:
    """``e' Q e + u' R u``."""
    e = np.asarray(e, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    Q = _check_weight(Q, e.size, "Q")
    R = _check_weight(R, u.size, "R")
    return float(e @ Q @ e + u @ R @ u)


def terminal_cost(e_N, Q_N) -> float:
    """``e_N' Q_N e_N``."""
    e_N = np.asarray(e_N, dtype=float).ravel()
    Q_N = _check_weight(Q_N, e_N.size, "Q_N")
    return float(e_N @ Q_N @ e_N)


def _left_matrix(a: np.ndarray) -> np.ndarray:
    """``_left_matrix(a) @ b == quat_multiply(a, b)``."""
    w, x, y, z = a
    return np.array([[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])


def _conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def terminal_error(x, xbar, kind: str) -> np.ndarray:
    """Tangent-space error ``[dp, dv, dtheta, dw]`` (``dw`` absent for ``rate``)."""
    x = _state_array(x, kind)
    xbar = _state_array(xbar, kind)
    Lq = _left_matrix(_conj(xbar[6:10]))[1:4]
    s = 1.0 if float(xbar[6:10] @ x[6:10]) >= 0.0 else -1.0
    parts = [xbar[0:6] - x[0:6], -2.0 * s * (Lq @ x[6:10])]
    if kind != "rate":
        parts.append(xbar[10:13] - x[10:13])
    return np.concatenate(parts)


def terminal_error_jacobian(x, xbar, kind: str) -> np.ndarray:
    x = _state_array(x, kind)
    xbar = _state_array(xbar, kind)
    nt = TANGENT_DIMS[kind]
    J = np.zeros((nt, x.shape[0]))
    J[0:6, 0:6] = -np.eye(6)
    s = 1.0 if float(xbar[6:10] @ x[6:10]) >= 0.0 else -1.0
    J[6:9, 6:10] = -2.0 * s * _left_matrix(_conj(xbar[6:10]))[1:4]
    if kind != "rate":
        J[9:12, 10:13] = -np.eye(3)
    return J


# ---------------------------------------------------------------------------
# terminal weight


def dare_terminal_weight(A, B, Q, R, tol: float = 1e-10, max_iter: int = 200_000):
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` from ``P = Q``
    until the largest entry change is at most ``tol`` (relative to
    ``max(1, |P|)``). Returns ``(P, K)`` with the gain in the ``u = K x``
    convention, ``K = -(R + B'PB)^-1 B'PA``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(A.shape[0], -1)
    n, m = B.shape
    Q = _check_weight(Q, n, "Q")
    R = _check_weight(R, m, "R")
    if A.shape != (n, n):
        raise OcpError("A must be square and match B")
    if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
        raise OcpError("R must be positive definite")
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        S = R + BtP @ B
        K = -np.linalg.solve(S, BtP @ A)
        P_new = Q + A.T @ P @ A + A.T @ P @ B @ K
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            raise DareError("Riccati iteration diverged")
        delta = np.max(np.abs(P_new - P))
        P = P_new
        if delta <= tol * max(1.0, np.max(np.abs(P))):
            BtP = B.T @ P
            K = -np.linalg.solve(R + BtP @ B, BtP @ A)
            return P, K
    raise DareError(f"Riccati iteration did not converge in {max_iter} steps")


def _controllable_basis(A: np.ndarray, B: np.ndarray, tol: float = 1e-9):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    U, s, _ = np.linalg.svd(C)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0], U
    rank = int(np.sum(s > tol * s[0]))
    return U[:, :rank], U[:, rank:]


# ---------------------------------------------------------------------------
# problem data


def _default_Q(kind: str) -> np.ndarray:
    if kind == "rate":
        return np.diag([10.0, 10, 10, 1, 1, 1, 10])
    return np.diag([10.0, 10, 10, 1, 1, 1, 1, 1, 1, 10])


@dataclass
class OcpProblem:
    """Finite-horizon optimal control problem.

    ``Q`` weights the stage error, ``R`` the input deviation from the
    reference input. ``Q_N`` weights the tangent terminal error; when left
    ``None`` it is the Riccati weight of the model linearized at the final
    reference. ``f_max`` bounds each paired thrust (``da``) or each body
    force component (``wrench``, ``rate``); ``tau_max`` and ``omega_max``
    bound torque and commanded rate. With ``planar`` the out-of-plane
    inputs are pinned to zero. ``workspace`` (3x2) and ``vel_box`` (3x2)
    are softened with weight ``soft_weight``.
    """

    kind: str = "da"
    N: int = 15
    dt: float = 0.1
    params: InertialParams = field(default_factory=InertialParams)
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    Q_N: np.ndarray | None = None
    f_max: float = 1.7
    tau_max: float = 0.4
    omega_max: float = 0.5
    workspace: np.ndarray = field(default_factory=lambda: np.array([[-5.0, 5.0], [-5.0, 5.0], [-1.0, 1.0]]))
    vel_box: np.ndarray = field(default_factory=lambda: np.array([[-1.0, 1.0]] * 3))
    planar: bool = True
    soft_weight: float = 1e4
    disturbance: Disturbance = ZERO_DISTURBANCE
    max_iter: int = 30
    kkt_tol: float = 1e-6
    att_tangent_weight: float | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise OcpError(f"unknown model kind {self.kind!r}")
        if int(self.N) != self.N or self.N < 2:
            raise OcpError("horizon N must be an integer >= 2")
        self.N = int(self.N)
        if not self.dt > 0:
            raise OcpError("dt must be positive")
        self.model = Model(self.kind, self.params, self.disturbance)
        nx, nu, ne = self.model.nx, self.model.nu, ERROR_DIMS[self.kind]
        self.Q = _check_weight(_default_Q(self.kind) if self.Q is None else self.Q, ne, "Q")
        self.R = _check_weight(0.1 * np.eye(nu) if self.R is None else self.R, nu, "R")
        if self.Q_N is not None:
            self.Q_N = _check_weight(self.Q_N, TANGENT_DIMS[self.kind], "Q_N")
        for name, W, strict in (("Q", self.Q, False), ("R", self.R, True), ("Q_N", self.Q_N, False)):
            if W is None:
                continue
            if not np.allclose(W, W.T, atol=1e-12):
                raise OcpError(f"{name} must be symmetric")
            lo = np.min(np.linalg.eigvalsh(W))
            if (strict and lo <= 0) or lo < -1e-12:
                raise OcpError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
        for name in ("f_max", "tau_max", "omega_max"):
            if not getattr(self, name) >= 0:
                raise OcpError(f"input box is empty: {name} < 0")
        self.workspace = np.asarray(self.workspace, dtype=float).reshape(3, 2)
        self.vel_box = np.asarray(self.vel_box, dtype=float).reshape(3, 2)
        if np.any(self.workspace[:, 0] > self.workspace[:, 1]) or np.any(self.vel_box[:, 0] > self.vel_box[:, 1]):
            raise OcpError("state box is empty")
        if self.soft_weight < 0:
            raise OcpError("soft_weight must be nonnegative")
        self.u_lb, self.u_ub = self._input_box()
        self._sqrt_Q = _psd_sqrt(self.Q)
        self._sqrt_R = _psd_sqrt(self.R)
        self._terminal_cache: dict = {}
        self._alloc_pinv = np.linalg.pinv(self.params.alloc)

    def _input_box(self):
        if self.kind == "da":
            ub = np.full(4, self.f_max)
        elif self.kind == "wrench":
            ub = np.array([self.f_max] * 3 + [self.tau_max] * 3)
        else:
            ub = np.array([self.f_max] * 3 + [self.omega_max] * 3)
        ub = ub.astype(float)
        if self.planar and self.kind != "da":
            ub[[2, 3, 4]] = 0.0  # f_z and the two in-plane rotation axes
        return -ub, ub

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nu(self) -> int:
        return self.model.nu

    def with_disturbance(self, d: Disturbance) -> "OcpProblem":
        return replace(self, disturbance=d)

    def tangent_Q(self) -> np.ndarray:
        """Stage weight carried over to the tangent coordinates of the terminal error."""
        d = np.diag(self.Q)
        w_att = d[-1] if self.att_tangent_weight is None else self.att_tangent_weight
        if self.kind == "rate":
            return np.diag(np.concatenate((d[0:6], [w_att] * 3)))
        return np.diag(np.concatenate((d[0:6], [w_att] * 3, d[6:9])))

    def terminal_weight(self, xbar, ubar) -> np.ndarray:
        """Riccati weight at the equilibrium ``(xbar, ubar)`` of the prediction model."""
        if self.Q_N is not None:
            return self.Q_N
        xbar = _state_array(xbar, self.kind)
        ubar = np.asarray(ubar, dtype=float)
        key = (xbar.tobytes(), np.round(ubar, 9).tobytes(), self.disturbance.as_array().tobytes())
        P = self._terminal_cache.get(key)
        if P is None:
            P = _riccati_weight(self, xbar, ubar)
            if len(self._terminal_cache) > 64:
                self._terminal_cache.clear()
            self._terminal_cache[key] = P
        return P


def _psd_sqrt(W: np.ndarray) -> np.ndarray:
    """``S`` with ``S' S = W``; diagonal weights take the elementwise root."""
    if np.count_nonzero(W - np.diag(np.diag(W))) == 0:
        return np.diag(np.sqrt(np.maximum(np.diag(W), 0.0)))
    lam, V = np.linalg.eigh(0.5 * (W + W.T))
    return (V * np.sqrt(np.maximum(lam, 0.0))).T


def _tangent_maps(xbar: np.ndarray, kind: str):
    """``T`` maps state increments at ``xbar`` to tangent coordinates, ``T_inv`` back."""
    nx = xbar.shape[0]
    nt = TANGENT_DIMS[kind]
    T = np.zeros((nt, nx))
    Ti = np.zeros((nx, nt))
    T[0:6, 0:6] = Ti[0:6, 0:6] = np.eye(6)
    Lq = _left_matrix(_conj(xbar[6:10]))[1:4]
    T[6:9, 6:10] = 2.0 * Lq
    Ti[6:10, 6:9] = 0.5 * Lq.T
    if kind != "rate":
        T[9:12, 10:13] = Ti[10:13, 9:12] = np.eye(3)
    return T, Ti


def _riccati_weight(problem: OcpProblem, xbar: np.ndarray, ubar: np.ndarray) -> np.ndarray:
    _, A, B = problem.model.step_batch(xbar[None, :], ubar[None, :], problem.dt)
    T, Ti = _tangent_maps(xbar, problem.kind)
    At = T @ A[0] @ Ti
    Bt = T @ B[0]
    Bt[:, problem.u_lb == problem.u_ub] = 0.0  # pinned inputs cannot act
    Qt = problem.tangent_Q()
    Vc, Vu = _controllable_basis(At, Bt)
    P = Vu @ (Vu.T @ Qt @ Vu) @ Vu.T
    if Vc.shape[1]:
        Pc, _ = dare_terminal_weight(Vc.T @ At @ Vc, Vc.T @ Bt, Vc.T @ Qt @ Vc, problem.R)
        P = P + Vc @ Pc @ Vc.T
    return 0.5 * (P + P.T)


def equilibrium_input(problem: OcpProblem, xbar) -> np.ndarray:
    """Input holding the prediction model at rest at ``xbar`` against its disturbance.

    The body force cancels ``m d_v`` and the torque cancels ``M d_omega``;
    the rate model has no torque channel, so only the force is trimmed.
    """
    xbar = _state_array(xbar, problem.kind)
    d = problem.disturbance
    p = problem.params
    f_body = quat_to_rotmat(xbar[6:10]) @ (-p.mass * np.asarray(d.d_v, float))
    if problem.kind == "rate":
        u = np.concatenate((f_body, np.zeros(3)))
    else:
        tau = -p.inertia @ np.asarray(d.d_omega, float)
        u = np.concatenate((f_body, tau))
        if problem.kind == "da":
            u = problem._alloc_pinv @ u
    return np.clip(u, problem.u_lb, problem.u_ub)


@dataclass
class Reference:
    """Per-stage reference states ``x_ref(0..N)`` and optional input targets ``u_ref(0..N-1)``."""

    states: np.ndarray
    inputs: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.inputs is not None:
            self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))

    @classmethod
    def constant(cls, x, N: int, kind: str = "da") -> "Reference":
        x = _state_array(x, kind)
        return cls(np.tile(x, (N + 1, 1)))

    @classmethod
    def from_states(cls, states, kind: str = "da") -> "Reference":
        return cls(np.vstack([_state_array(s, kind) for s in states]))

    def resolved(self, problem: OcpProblem) -> tuple[np.ndarray, np.ndarray]:
        N, nx, nu = problem.N, problem.nx, problem.nu
        X = self.states
        if X.shape[1] == 13 and nx == 10:
            X = X[:, :10]
        if X.shape != (N + 1, nx):
            raise OcpError(f"reference needs shape {(N + 1, nx)}, got {X.shape}")
        q = X[:, 6:10]
        if np.any(np.abs(np.linalg.norm(q, axis=1) - 1.0) > 1e-6):
            raise OcpError("reference quaternions must be unit norm")
        if self.inputs is None:
            if np.all(X[:-1] == X[0]):
                U = np.tile(equilibrium_input(problem, X[0]), (N, 1))
            else:
                U = np.vstack([equilibrium_input(problem, X[k]) for k in range(N)])
        else:
            U = self.inputs
            if U.shape != (N, nu):
                raise OcpError(f"reference inputs need shape {(N, nu)}, got {U.shape}")
        return X, U


@dataclass
class OcpSolution:
    """Nodes ``X`` (N+1, nx) including ``x(0)``, inputs ``U`` (N, nu) and diagnostics."""

    X: np.ndarray
    U: np.ndarray
    cost: float
    iterations: int
    kkt: float
    status: str
    defect: float
    history: list = field(default_factory=list)

    @property
    def states(self) -> np.ndarray:
        return self.X[1:]

    @property
    def inputs(self) -> np.ndarray:
        return self.U

    def shifted(self) -> "OcpSolution":
        """Warm start for the next tick: drop the first stage and repeat the last."""
        X = np.vstack((self.X[1:], self.X[-1:]))
        U = np.vstack((self.U[1:], self.U[-1:]))
        return replace(self, X=X, U=U, history=[])


# ---------------------------------------------------------------------------
# box-constrained QP


def box_qp(H, g, lo, hi, x0=None, max_iter: int | None = None) -> np.ndarray:
    """Minimize ``0.5 x'Hx + g'x`` subject to ``lo <= x <= hi`` for positive definite ``H``.

    Primal active-set method started from the clipped unconstrained
    minimizer (or ``x0``). Each iteration either moves to a blocking bound
    or releases the bound with the most negative multiplier.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = g.size
    if np.any(lo > hi):
        raise OcpError("box QP with empty feasible set")
    if max_iter is None:
        max_iter = 10 * n + 10
    if x0 is None:
        x0 = np.linalg.solve(H, -g)
    x = np.clip(x0, lo, hi)
    # working set: -1 at lower, +1 at upper, 0 free
    ws = np.zeros(n, dtype=int)
    ws[x <= lo] = -1
    ws[x >= hi] = 1
    ws[lo == hi] = 2  # pinned for good
    for _ in range(max_iter):
        free = ws == 0
        grad = H @ x + g
        p = np.zeros(n)
        if np.any(free):
            Hf = H[np.ix_(free, free)]
            p[free] = np.linalg.solve(Hf, -grad[free])
        if np.max(np.abs(p), initial=0.0) <= 1e-14 * (1.0 + np.max(np.abs(x), initial=0.0)):
            # multipliers of the bounds in the working set
            lam = np.where(ws == -1, grad, np.where(ws == 1, -grad, 0.0))
            j = int(np.argmin(lam))
            if lam[j] >= -1e-12:
                return x
            ws[j] = 0
            continue
        alpha, block = 1.0, -1
        for i in np.flatnonzero(free & (p != 0)):
            lim = (hi[i] - x[i]) / p[i] if p[i] > 0 else (lo[i] - x[i]) / p[i]
            if lim < alpha:
                alpha, block = lim, i
        x = x + max(alpha, 0.0) * p
        if block >= 0:
            if p[block] > 0:
                x[block], ws[block] = hi[block], 1
            else:
                x[block], ws[block] = lo[block], -1
    raise OcpError("box QP active set did not terminate")


# ---------------------------------------------------------------------------
# transcription


class Transcription:
    """The multiple-shooting NLP of one OCP instance.

    The decision vector ``z`` stacks ``x(1..N)`` then ``u(0..N-1)``. The
    objective is ``sum_k l(e_k, u_k - u_ref_k) + V(e_N)`` plus the state
    penalties; the equality constraints are the shooting defects
    ``g(x_k, u_k) - x_{k+1}``.
    """

    def __init__(self, problem: OcpProblem, x0, ref: Reference):
        self.p = problem
        self.kind = problem.kind
        self.x0 = _state_array(x0, self.kind)
        if not np.all(np.isfinite(self.x0)):
            raise OcpError("initial state must be finite")
        self.xref, self.uref = ref.resolved(problem)
        self.N, self.nx, self.nu = problem.N, problem.nx, problem.nu
        self.S_N = _psd_sqrt(problem.terminal_weight(self.xref[-1], self.uref[-1]))
        self.Q_N = self.S_N.T @ self.S_N
        self._sw = np.sqrt(problem.soft_weight)
        self._lo = np.concatenate((problem.workspace[:, 0], problem.vel_box[:, 0]))
        self._hi = np.concatenate((problem.workspace[:, 1], problem.vel_box[:, 1]))
        # constant parts of the residual Jacobians
        ne = ERROR_DIMS[self.kind]
        E = np.zeros((ne, self.nx))
        E[0:6, 0:6] = -np.eye(6)
        if self.kind != "rate":
            E[6:9, 10:13] = -np.eye(3)
        self._E = E
        r0 = problem._sqrt_Q @ state_error(self.x0, self.xref[0], self.kind)
        self._c0 = float(r0 @ r0)

    # -- residual blocks ---------------------------------------------------

    def _soft(self, Y, jac: bool):
        """Penalty residuals of nodes ``Y`` (K, nx) and their diagonal Jacobians (K, 6)."""
        viol = Y[:, 0:6] - np.clip(Y[:, 0:6], self._lo, self._hi)
        return self._sw * viol, (self._sw * (viol != 0) if jac else None)

    def residuals(self, X, U, jac: bool = True):
        """Residuals of nodes ``1..N`` and of the inputs.

        Returns ``(rs, Js, rN, JN, ru)``: stage rows ``rs`` (N-1, m) with
        Jacobians ``Js`` (N-1, m, nx), terminal rows ``rN`` with Jacobian
        ``JN`` and input rows ``ru`` (N, nu). Penalty rows are appended to
        every node.
        """
        N, kind = self.N, self.kind
        sQ = self.p._sqrt_Q
        Xs = X[1:N]
        xr = self.xref[1:N]
        rdot = np.einsum("ki,ki->k", xr[:, 6:10], Xs[:, 6:10])
        e = np.empty((N - 1, sQ.shape[0]))
        e[:, 0:6] = xr[:, 0:6] - Xs[:, 0:6]
        if kind != "rate":
            e[:, 6:9] = xr[:, 10:13] - Xs[:, 10:13]
        e[:, -1] = 1.0 - rdot * rdot
        soft, dsoft = self._soft(X[1:], jac)
        rs = np.hstack((e @ sQ.T, soft[:-1]))
        rN = np.concatenate((self.S_N @ terminal_error(X[N], self.xref[N], kind), soft[-1]))
        ru = (U - self.uref) @ self.p._sqrt_R.T
        if not jac:
            return rs, None, rN, None, ru
        Eb = np.broadcast_to(self._E, (N - 1,) + self._E.shape).copy()
        Eb[:, -1, 6:10] = -2.0 * rdot[:, None] * xr[:, 6:10]
        ns = sQ.shape[0]
        Js = np.zeros((N - 1, ns + 6, self.nx))
        Js[:, :ns] = np.einsum("ij,kjl->kil", sQ, Eb)
        idx = np.arange(6)
        Js[:, ns + idx, idx] = dsoft[:-1]
        nt = self.S_N.shape[0]
        JN = np.zeros((nt + 6, self.nx))
        JN[:nt] = self.S_N @ terminal_error_jacobian(X[N], self.xref[N], kind)
        JN[nt + idx, idx] = dsoft[-1]
        return rs, Js, rN, JN, ru

    def state_residual(self, k: int, x, jac: bool = True):
        """Residual of node ``k`` alone (stage error for ``k < N``, terminal at ``N``)."""
        xr = self.xref[k]
        if k < self.N:
            r = self.p._sqrt_Q @ state_error(x, xr, self.kind)
            J = self.p._sqrt_Q @ state_error_jacobian(x, xr, self.kind) if jac else None
        else:
            r = self.S_N @ terminal_error(x, xr, self.kind)
            J = self.S_N @ terminal_error_jacobian(x, xr, self.kind) if jac else None
        if k == 0:
            return r, J
        rs, ds = self._soft(np.asarray(x, float)[None, :], jac)
        if not jac:
            return np.concatenate((r, rs[0])), None
        Js = np.zeros((6, self.nx))
        Js[np.arange(6), np.arange(6)] = ds[0]
        return np.concatenate((r, rs[0])), np.vstack((J, Js))

    def input_residual(self, k: int, u):
        return self.p._sqrt_R @ (np.asarray(u) - self.uref[k])

    # -- flat interface ----------------------------------------------------

    def pack(self, X, U) -> np.ndarray:
        return np.concatenate((np.asarray(X)[1:].ravel(), np.asarray(U).ravel()))

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        n = self.N * self.nx
        X = np.vstack((self.x0, z[:n].reshape(self.N, self.nx)))
        return X, z[n:].reshape(self.N, self.nu)

    def cost(self, X, U) -> float:
        rs, _, rN, _, ru = self.residuals(X, U, jac=False)
        return self._c0 + float(np.sum(rs * rs) + rN @ rN + np.sum(ru * ru))

    def objective(self, z) -> float:
        return self.cost(*self.unpack(z))

    def gradient(self, z) -> np.ndarray:
        X, U = self.unpack(z)
        rs, Js, rN, JN, ru = self.residuals(X, U)
        gX = np.zeros_like(X)
        gX[1:self.N] = 2.0 * np.einsum("kmi,km->ki", Js, rs)
        gX[self.N] = 2.0 * JN.T @ rN
        gU = 2.0 * ru @ self.p._sqrt_R
        return self.pack(gX, gU)

    def defects(self, z) -> np.ndarray:
        X, U = self.unpack(z)
        Xn, _, _ = self.p.model.step_batch(X[:-1], U, self.p.dt, jacobian=False)
        return (Xn - X[1:]).ravel()

    def defect_jacobian(self, z) -> np.ndarray:
        X, U = self.unpack(z)
        _, A, B = self.p.model.step_batch(X[:-1], U, self.p.dt)
        N, nx, nu = self.N, self.nx, self.nu
        Jc = np.zeros((N * nx, N * nx + N * nu))
        for k in range(N):
            rows = slice(k * nx, (k + 1) * nx)
            if k > 0:
                Jc[rows, (k - 1) * nx:k * nx] = A[k]
            Jc[rows, k * nx:(k + 1) * nx] -= np.eye(nx)
            Jc[rows, N * nx + k * nu:N * nx + (k + 1) * nu] = B[k]
        return Jc


# ---------------------------------------------------------------------------
# SQP


ARMIJO = 1e-4
BACKTRACK = 0.5
MIN_STEP = 2.0 ** -30


def _initial_guess(tr: Transcription, warm: OcpSolution | None):
    p = tr.p
    if warm is not None:
        X = np.array(warm.X, dtype=float)
        U = np.array(warm.U, dtype=float)
        if X.shape != (tr.N + 1, tr.nx) or U.shape != (tr.N, tr.nu):
            raise OcpError("warm start has inconsistent dimensions")
        if float(X[1, 6:10] @ tr.x0[6:10]) < 0.0:
            X[:, 6:10] *= -1.0  # same rotations on the measurement's half of the cover
        X[0] = tr.x0
        return X, np.clip(U, p.u_lb, p.u_ub)
    U = np.clip(tr.uref.copy(), p.u_lb, p.u_ub)
    X = np.empty((tr.N + 1, tr.nx))
    X[0] = tr.x0
    for k in range(tr.N):
        X[k + 1] = p.model.step(X[k], U[k], p.dt)
    return X, U


def _merit(tr: Transcription, X, U, mu: float):
    Xn, _, _ = tr.p.model.step_batch(X[:-1], U, tr.p.dt, jacobian=False)
    c = Xn - X[1:]
    J = tr.cost(X, U)
    return J + mu * float(np.abs(c).sum()), J


def solve(problem: OcpProblem, x0, ref: Reference, warm_start: OcpSolution | None = None) -> OcpSolution:
    """Solve the OCP from ``x0`` by Gauss-Newton SQP.

    Stops when the KKT residual (the larger of the projected reduced
    gradient divided by ``max(1, J)`` and the largest shooting defect) is at
    most ``problem.kkt_tol``, or returns the last accepted iterate with
    status ``"max_iter"`` after ``problem.max_iter`` QP steps.
    """
    tr = Transcription(problem, x0, ref)
    N, nx, nu = tr.N, tr.nx, tr.nu
    X, U = _initial_guess(tr, warm_start)
    mu = 1.0
    history = []
    model, dt = problem.model, problem.dt
    sR = problem._sqrt_R
    n = N * nu
    lb = np.tile(problem.u_lb, N)
    ub = np.tile(problem.u_ub, N)
    Ju = np.kron(np.eye(N), sR)
    status = "max_iter"
    it = 0
    while True:
        Xn, A, B = model.step_batch(X[:-1], U, dt)
        c = Xn - X[1:]
        # condense: dX_k = G[k] du + g[k]
        G = np.zeros((N + 1, nx, n))
        g = np.zeros((N + 1, nx))
        for k in range(N):
            G[k + 1] = A[k] @ G[k]
            G[k + 1][:, k * nu:(k + 1) * nu] += B[k]
            g[k + 1] = A[k] @ g[k] + c[k]
        rs, Js, rN, JN, ru = tr.residuals(X, U)
        ru = ru.ravel()
        cost = tr._c0 + float(np.sum(rs * rs) + rN @ rN + ru @ ru)
        history.append(cost)
        JG = np.einsum("kmi,kin->kmn", Js, G[1:N]).reshape(-1, n)
        rg = (rs + np.einsum("kmi,ki->km", Js, g[1:N])).ravel()
        JGN = JN @ G[N]
        rgN = rN + JN @ g[N]
        H = JG.T @ JG + JGN.T @ JGN + Ju.T @ Ju
        h = JG.T @ rg + JGN.T @ rgN + Ju.T @ ru
        # KKT residual at the current iterate
        u_flat = U.ravel()
        grad = 2.0 * h
        pg = grad.copy()
        pg[(u_flat <= lb + 1e-12) & (grad > 0)] = 0.0
        pg[(u_flat >= ub - 1e-12) & (grad < 0)] = 0.0
        defect = float(np.max(np.abs(c))) if c.size else 0.0
        # stationarity is measured relative to the cost scale, feasibility absolutely
        kkt = max(float(np.max(np.abs(pg))) / max(1.0, cost), defect)
        if kkt <= problem.kkt_tol:
            status = "optimal"
            break
        if it >= problem.max_iter:
            break
        du = box_qp(H, h, lb - u_flat, ub - u_flat)
        dX = np.einsum("kij,j->ki", G, du) + g
        dU = du.reshape(N, nu)
        # multipliers of the linearized dynamics bound the l1 penalty parameter
        lin_s = rs + np.einsum("kmi,ki->km", Js, dX[1:N])
        lam = 2.0 * JN.T @ (rN + JN @ dX[N])
        lam_max = float(np.max(np.abs(lam)))
        for k in range(N - 1, 0, -1):
            lam = 2.0 * Js[k - 1].T @ lin_s[k - 1] + A[k].T @ lam
            lam_max = max(lam_max, float(np.max(np.abs(lam))))
        mu = max(mu, 1.1 * lam_max + 1e-6)
        c1 = float(np.abs(c).sum())
        slope = 2.0 * (float(np.einsum("km,kmi,ki->", rs, Js, dX[1:N])) + float(rN @ (JN @ dX[N]))
                       + float(ru @ (Ju @ du))) - mu * c1
        phi0 = cost + mu * c1
        alpha = 1.0
        while True:
            Xt = X + alpha * dX
            Xt[:, 6:10] /= np.linalg.norm(Xt[:, 6:10], axis=1)[:, None]
            Ut = np.clip(U + alpha * dU, problem.u_lb, problem.u_ub)
            phi, _ = _merit(tr, Xt, Ut, mu)
            if phi <= phi0 + ARMIJO * alpha * min(slope, 0.0) or alpha <= MIN_STEP:
                break
            alpha *= BACKTRACK
        it += 1
        if alpha <= MIN_STEP and phi > phi0:
            break  # no progress possible along the Gauss-Newton direction
        X, U = Xt, Ut
    U = np.clip(U, problem.u_lb, problem.u_ub)
    return OcpSolution(X, U, history[-1], it, kkt, status, defect, history)


class Controller:
    """Receding-horizon wrapper holding the warm start between ticks."""

    def __init__(self, problem: OcpProblem):
        self.problem = problem
        self.last: OcpSolution | None = None
        self.u_prev = np.zeros(problem.nu)
        self.history: list[OcpSolution] = []

    def reset(self):
        self.last = None
        self.u_prev = np.zeros(self.problem.nu)

    def set_disturbance(self, d: Disturbance):
        """Replace the disturbance of the prediction model (offset-free operation)."""
        cache = self.problem._terminal_cache
        self.problem = self.problem.with_disturbance(d)
        self.problem._terminal_cache = cache

    def step(self, x_meas, ref: Reference) -> np.ndarray:
        warm = self.last.shifted() if self.last is not None else None
        sol = solve(self.problem, x_meas, ref, warm_start=warm)
        self.last = sol
        self.history.append(sol)
        if sol.status == "optimal":
            self.u_prev = sol.U[0].copy()
        return self.u_prev.copy()

    @property
    def solution(self) -> OcpSolution | None:
        return self.last


def receding_horizon_step(controller: Controller, x_meas, ref: Reference) -> np.ndarray:
    """Solve from ``x_meas`` and return ``u*(0|k)``; holds the previous input on ``max_iter``."""
    return controller.step(x_meas, ref)
