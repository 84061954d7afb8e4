"""Rigid-body models of a thruster-actuated free-flyer.

Quaternions are stored scalar-first, ``q = [q_w, q_x, q_y, q_z]``, and
represent the body-to-world rotation.  ``quat_to_rotmat`` returns the
world-to-body matrix ``R(q)``, so body-frame forces are rotated into the
world frame with ``R(q).T``.

State layouts (flat ``float64`` arrays):

* full models (``da``, ``wrench``): ``[p(3), v(3), q(4), omega(3)]`` -> 13
* rate model: ``[p(3), v(3), q(4)]`` -> 10
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels

NORM_TOL = 1e-6
LIFT_TOL = 1e-9

# index slices into the full state
P = slice(0, 3)
V = slice(3, 6)
Q = slice(6, 10)
W = slice(10, 13)

MODEL_KINDS = ("da", "wrench", "rate")


class DynamicsError(ValueError):
    pass


def skew(a: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def _check_unit(q: np.ndarray) -> None:
    n = np.linalg.norm(q)
    if not np.isfinite(n) or abs(n - 1.0) > NORM_TOL:
        raise DynamicsError(f"quaternion is not unit norm (|q| = {n!r})")


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b`` (scalar first)."""
    aw, av = a[0], np.asarray(a[1:])
    bw, bv = b[0], np.asarray(b[1:])
    return np.concatenate(([aw * bw - av @ bv], aw * bv + bw * av + np.cross(av, bv)))


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate(([np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis))


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw / 2.0), 0.0, 0.0, np.sin(yaw / 2.0)])


def quat_yaw(q: np.ndarray) -> float:
    """Heading angle (rotation about world z) of ``q``."""
    w, x, y, z = q
    return float(np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """World-to-body rotation matrix of a unit quaternion.

    Raises
    ------
    DynamicsError
        If ``q`` deviates from unit norm by more than 1e-6.
    """
    q = np.asarray(q, dtype=float)
    _check_unit(q)
    w, qv = q[0], q[1:]
    return (2.0 * w * w - 1.0) * np.eye(3) - 2.0 * w * skew(qv) + 2.0 * np.outer(qv, qv)


def _body_to_world(q: np.ndarray) -> np.ndarray:
    # same quadratic form as quat_to_rotmat(q).T, without the norm check (RK4 stages)
    w, qv = q[0], q[1:]
    return (w * w - qv @ qv) * np.eye(3) + 2.0 * w * skew(qv) + 2.0 * np.outer(qv, qv)


def xi_matrix(q: np.ndarray) -> np.ndarray:
    """4x3 matrix with ``q_dot = 0.5 * xi_matrix(q) @ omega``."""
    w, qv = q[0], np.asarray(q[1:])
    return np.vstack((-qv[None, :], w * np.eye(3) + skew(qv)))


def quat_kinematics(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    _check_unit(q)
    return 0.5 * xi_matrix(q) @ np.asarray(omega, dtype=float)


def reduced_quat_lift(q_vec) -> np.ndarray:
    """Recover the full quaternion ``[sqrt(1 - |q_vec|^2), q_vec]``.

    Norms in ``(1, 1 + 1e-9]`` are clamped back onto the unit ball; larger
    ones raise :class:`DynamicsError`.
    """
    q_vec = np.asarray(q_vec, dtype=float)
    n2 = float(q_vec @ q_vec)
    if n2 > (1.0 + LIFT_TOL) ** 2 or not np.isfinite(n2):
        raise DynamicsError(f"|q_vec| = {np.sqrt(n2)!r} exceeds 1")
    if n2 > 1.0:
        q_vec = q_vec / np.sqrt(n2)
        n2 = 1.0
    return np.concatenate(([np.sqrt(1.0 - n2)], q_vec))


@dataclass
class RigidState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)
        _check_unit(self.q)

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.p, self.v, self.q, self.omega))

    @classmethod
    def from_array(cls, x) -> "RigidState":
        x = np.asarray(x, dtype=float)
        if x.shape == (10,):
            return cls(x[P], x[V], x[Q], np.zeros(3))
        return cls(x[P], x[V], x[Q], x[W])

    @classmethod
    def planar(cls, x=0.0, y=0.0, yaw=0.0, vx=0.0, vy=0.0, wz=0.0) -> "RigidState":
        return cls([x, y, 0.0], [vx, vy, 0.0], quat_from_yaw(yaw), [0.0, 0.0, wz])


def square_layout_matrices(edge: float = 0.24) -> tuple[np.ndarray, np.ndarray]:
    """Paired-thrust allocation matrices for four modules on a square.

    Pair 0 and 1 act along body x on the lines ``y = +a`` and ``y = -a``,
    pairs 2 and 3 act along body y on ``x = +a`` and ``x = -a`` with
    ``a = edge / 2``.
    """
    a = edge / 2.0
    D = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
    L = np.zeros((3, 4))
    L[2] = [-a, a, a, -a]
    return D, L


@dataclass
class InertialParams:
    """Mass, inertia and paired-thrust allocation of a free-flyer.

    Defaults are the thruster-plate platform: 16.8 kg, 0.297 kg m^2 about z.
    The in-plane inertia components are placeholders; they are never excited
    in planar operation.
    """

    mass: float = 16.8
    inertia: np.ndarray = field(default_factory=lambda: np.diag([0.297, 0.297, 0.297]))
    alloc_force: np.ndarray | None = None
    alloc_torque: np.ndarray | None = None

    def __post_init__(self):
        if not self.mass > 0:
            raise DynamicsError("mass must be positive")
        M = np.asarray(self.inertia, dtype=float)
        if M.shape == (3,):
            M = np.diag(M)
        if M.shape != (3, 3) or not np.allclose(M, M.T, atol=1e-12):
            raise DynamicsError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(M)) <= 0:
            raise DynamicsError("inertia must be positive definite")
        self.inertia = M
        self.inertia_inv = np.linalg.inv(M)
        D0, L0 = square_layout_matrices()
        self.alloc_force = D0 if self.alloc_force is None else np.asarray(self.alloc_force, float)
        self.alloc_torque = L0 if self.alloc_torque is None else np.asarray(self.alloc_torque, float)
        if self.alloc_force.shape != (3, 4) or self.alloc_torque.shape != (3, 4):
            raise DynamicsError("allocation matrices must be 3x4")
        if not (np.all(np.isfinite(self.alloc_force)) and np.all(np.isfinite(self.alloc_torque))):
            raise DynamicsError("allocation matrices must be finite")

    @property
    def alloc(self) -> np.ndarray:
        """Stacked 6x4 map from paired thrusts to body wrench."""
        return np.vstack((self.alloc_force, self.alloc_torque))


@dataclass(frozen=True)
class Disturbance:
    d_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate((np.asarray(self.d_v, float), np.asarray(self.d_omega, float)))


ZERO_DISTURBANCE = Disturbance()


# ---------------------------------------------------------------------------
# continuous-time models


def dynamics_wrench(x, f, tau, params: InertialParams, d: Disturbance = ZERO_DISTURBANCE) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    q = x[Q]
    om = x[W]
    M = params.inertia
    xdot = np.empty(13)
    xdot[P] = x[V]
    xdot[V] = _body_to_world(q) @ np.asarray(f, float) / params.mass + np.asarray(d.d_v, float)
    xdot[Q] = 0.5 * xi_matrix(q) @ om
    xdot[W] = params.inertia_inv @ (np.asarray(tau, float) - np.cross(om, M @ om)) + np.asarray(d.d_omega, float)
    return xdot


def dynamics_da(x, u, params: InertialParams) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return dynamics_wrench(x, params.alloc_force @ u, params.alloc_torque @ u, params)


def dynamics_rate(x, f, omega_cmd, params: InertialParams, d: Disturbance = ZERO_DISTURBANCE) -> np.ndarray:
    x = np.asarray(x, dtype=float)[:10]
    q = x[Q]
    xdot = np.empty(10)
    xdot[P] = x[V]
    xdot[V] = _body_to_world(q) @ np.asarray(f, float) / params.mass + np.asarray(d.d_v, float)
    xdot[Q] = 0.5 * xi_matrix(q) @ np.asarray(omega_cmd, float)
    return xdot


# ---------------------------------------------------------------------------
# discrete-time models


@dataclass
class Model:
    """A discretizable control model.

    ``kind`` selects the input convention: ``da`` takes four paired thrusts,
    ``wrench`` takes ``[f, tau]`` and ``rate`` takes ``[f, omega_cmd]``.
    """

    kind: str
    params: InertialParams = field(default_factory=InertialParams)
    disturbance: Disturbance = ZERO_DISTURBANCE

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DynamicsError(f"unknown model kind {self.kind!r}")

    @property
    def nx(self) -> int:
        return 10 if self.kind == "rate" else 13

    @property
    def nu(self) -> int:
        return 4 if self.kind == "da" else 6

    def f(self, x, u) -> np.ndarray:
        u = np.asarray(u, float)
        if self.kind == "da":
            return dynamics_wrench(x, self.params.alloc_force @ u, self.params.alloc_torque @ u,
                                   self.params, self.disturbance)
        if self.kind == "wrench":
            return dynamics_wrench(x, u[:3], u[3:], self.params, self.disturbance)
        return dynamics_rate(x, u[:3], u[3:], self.params, self.disturbance)

    def to_kernel_input(self, U: np.ndarray) -> np.ndarray:
        """Map model inputs to the 6-vector the compiled kernels consume."""
        U = np.asarray(U, dtype=float)
        if self.kind == "da":
            return U @ self.params.alloc.T
        return U

    def step(self, x, u, dt: float) -> np.ndarray:
        return rk4_step(self, x, u, dt)

    def step_batch(self, X, U, dt: float, jacobian: bool = True):
        """Discrete map and its Jacobians for a batch of (state, input) pairs.

        Returns ``(X_next, A, B)`` with shapes ``(K, nx)``, ``(K, nx, nx)`` and
        ``(K, nx, nu)``; ``A`` and ``B`` are ``None`` when ``jacobian`` is off.
        """
        if dt <= 0:
            raise DynamicsError("dt must be positive")
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        W6 = np.ascontiguousarray(np.atleast_2d(self.to_kernel_input(U)), dtype=float)
        d = self.disturbance.as_array()
        if self.kind == "rate":
            Xn, A, B = kernels.rate_rk4(X, W6, d[:3], self.params.mass, dt, jacobian)
        else:
            Xn, A, B = kernels.wrench_rk4(X, W6, d, self.params.mass, self.params.inertia,
                                          self.params.inertia_inv, dt, jacobian)
        if not np.all(np.isfinite(Xn)):
            raise DynamicsError("non-finite state produced by RK4 step")
        if jacobian and self.kind == "da":
            B = B @ self.params.alloc
        return Xn, A, B


def rk4_step(model: Model | Callable, x, u, dt: float) -> np.ndarray:
    """One classical RK4 step followed by quaternion renormalization.

    ``model`` is either a :class:`Model` or a callable ``f(x, u)`` returning
    the state derivative of a full (13) or rate (10) state.
    """
    if dt <= 0:
        raise DynamicsError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if isinstance(model, Model):
        xn, _, _ = model.step_batch(x[None, :], np.asarray(u, float)[None, :], dt, jacobian=False)
        return xn[0]
    f = model
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    xn = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(xn)):
        raise DynamicsError("non-finite state produced by RK4 step")
    return _renorm(xn)


def _renorm(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    x[Q] /= np.linalg.norm(x[Q])
    return x
