"""Extended Kalman filter over the disturbance-augmented state, and the
offset-free NMPC loop built on it.

The filter state has 18 entries ``[p, v, q_vec, omega, d_v, d_omega]``.
The attitude is carried by the vector part of the quaternion on the
``q_w >= 0`` half of the double cover; the full quaternion is recovered
with :func:`~atmoskit.dynamics.reduced_quat_lift` whenever the model is
evaluated. Disturbances are random walks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Disturbance, DynamicsError, InertialParams, Model, RigidState, reduced_quat_lift
from .nmpc import Controller, Reference

NX_AUG = 18
NZ = 12
FD_STEP = 1e-6

# per-second process noise and measurement noise defaults
W_KINEMATIC = 1e-6
W_DISTURBANCE = 1e-4
V_DEFAULT = np.concatenate(([1e-4] * 3, [1e-4] * 3, [1e-6] * 3, [1e-6] * 3))


class EstimatorError(RuntimeError):
    pass


def default_process_noise(estimate_d_omega: bool = True) -> np.ndarray:
    w = np.concatenate(([W_KINEMATIC] * 12, [W_DISTURBANCE] * 6))
    if not estimate_d_omega:
        w[15:18] = 0.0
    return np.diag(w)


def default_measurement_noise() -> np.ndarray:
    return np.diag(V_DEFAULT)


def _canonical(q: np.ndarray) -> np.ndarray:
    return -q if q[0] < 0.0 else q


@dataclass
class Measurement:
    p: np.ndarray
    v: np.ndarray
    q_vec: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("p", "v", "q_vec", "omega"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(a)):
                raise EstimatorError(f"measurement {name} is not finite")
            setattr(self, name, a)
        if np.linalg.norm(self.q_vec) > 1.0 + 1e-9:
            raise EstimatorError("measured q_vec lies outside the unit ball")

    @classmethod
    def from_state(cls, x) -> "Measurement":
        """Measurement of a full state, negating the quaternion when ``q_w < 0``."""
        if isinstance(x, RigidState):
            x = x.as_array()
        x = np.asarray(x, dtype=float)
        q = _canonical(x[6:10])
        return cls(x[0:3], x[3:6], q[1:4], x[10:13])

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.p, self.v, self.q_vec, self.omega))


@dataclass
class AugmentedEstimate:
    mean: np.ndarray
    cov: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(NX_AUG)
        self.cov = np.asarray(self.cov, dtype=float).reshape(NX_AUG, NX_AUG)
        if np.linalg.norm(self.mean[6:9]) > 1.0 + 1e-9:
            raise EstimatorError("q_vec of the estimate lies outside the unit ball")

    @classmethod
    def from_state(cls, x, cov=None, d: Disturbance | None = None) -> "AugmentedEstimate":
        z = Measurement.from_state(x).as_array()
        dd = np.zeros(6) if d is None else d.as_array()
        P = np.diag([1e-4] * 12 + [1e-4] * 6) if cov is None else cov
        return cls(np.concatenate((z, dd)), P)

    @property
    def state(self) -> np.ndarray:
        """The 13-entry rigid state with the lifted quaternion."""
        return _lift(self.mean)

    @property
    def disturbance(self) -> Disturbance:
        return Disturbance(self.mean[12:15].copy(), self.mean[15:18].copy())


def _lift(m: np.ndarray) -> np.ndarray:
    v = m[6:9]
    n = np.linalg.norm(v)
    if n > 1.0:
        v = v / n  # finite-difference probes may step just past the chart edge
    return np.concatenate((m[0:6], reduced_quat_lift(v), m[9:12]))


def _reduce(x: np.ndarray, sign: float | None = None) -> np.ndarray:
    q = _canonical(x[6:10]) if sign is None else sign * x[6:10]
    return np.concatenate((x[0:6], q[1:4], x[10:13]))


def _step(m: np.ndarray, u: np.ndarray, params: InertialParams, dt: float) -> np.ndarray:
    model = Model("wrench", params, Disturbance(m[12:15], m[15:18]))
    return model.step(_lift(m), u, dt)


def _augmented_map(m: np.ndarray, u: np.ndarray, params: InertialParams, dt: float) -> np.ndarray:
    """One RK4 step of the disturbed wrench model in reduced coordinates."""
    return np.concatenate((_reduce(_step(m, u, params, dt)), m[12:18]))


def _jacobian(m: np.ndarray, u: np.ndarray, params: InertialParams, dt: float, h: float = FD_STEP) -> np.ndarray:
    # every probe is reduced on the nominal output's side of the double cover,
    # so a step across q_w = 0 does not show up as a jump
    q0 = _step(m, u, params, dt)[6:10]
    sign = -1.0 if q0[0] < 0.0 else 1.0

    def probe(mm):
        x = _step(mm, u, params, dt)
        s = sign if x[6:10] @ q0 >= 0.0 else -sign
        return np.concatenate((_reduce(x, s), mm[12:18]))

    F = np.empty((NX_AUG, NX_AUG))
    for j in range(NX_AUG):
        e = np.zeros(NX_AUG)
        e[j] = h
        F[:, j] = (probe(m + e) - probe(m - e)) / (2.0 * h)
    return F


def ekf_predict(est: AugmentedEstimate, u_applied, params: InertialParams, dt: float,
                W=None) -> AugmentedEstimate:
    """Propagate the mean through RK4 and the covariance through the
    central-difference Jacobian: ``P+ = F P F' + W dt``.

    ``u_applied`` is the body wrench ``[f, tau]``. ``W`` (18x18 or its
    diagonal) is a per-second process noise intensity.
    """
    if not dt > 0:
        raise EstimatorError("dt must be positive")
    u = np.asarray(u_applied, dtype=float).reshape(6)
    W = default_process_noise() if W is None else np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    try:
        mean = _augmented_map(est.mean, u, params, dt)
        F = _jacobian(est.mean, u, params, dt)
    except DynamicsError as exc:
        raise EstimatorError(f"prediction left the quaternion chart: {exc}") from exc
    P = F @ est.cov @ F.T + W * dt
    P = 0.5 * (P + P.T)
    return AugmentedEstimate(mean, P, est.k + 1)


def ekf_update(est: AugmentedEstimate, z: Measurement, V=None) -> AugmentedEstimate:
    """Measurement update with identity observation of the first 12 entries.

    Uses the Joseph form ``(I - KH) P (I - KH)' + K V K'``; the disturbance
    entries move only through their cross-covariance with the kinematics.
    """
    V = default_measurement_noise() if V is None else np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = np.diag(V)
    H = np.zeros((NZ, NX_AUG))
    H[:, :NZ] = np.eye(NZ)
    zz = z.as_array()
    # near q_w = 0 the antipodal representative of the measurement may be the closer one
    if reduced_quat_lift(zz[6:9] / max(1.0, np.linalg.norm(zz[6:9]))) @ _lift(est.mean)[6:10] < 0.0:
        zz[6:9] = -zz[6:9]
    y = zz - est.mean[:NZ]
    S = est.cov[:NZ, :NZ] + V
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(S)
        raise EstimatorError(f"innovation covariance is not positive definite "
                             f"(min eigenvalue {ev.min():.3e}, step {est.k})") from None
    # K = P H' S^-1 via the Cholesky factor
    PHt = est.cov[:, :NZ]
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    mean = est.mean + K @ y
    n = np.linalg.norm(mean[6:9])
    if n > 1.0:
        mean[6:9] /= n
    IKH = np.eye(NX_AUG) - K @ H
    P = IKH @ est.cov @ IKH.T + K @ V @ K.T
    P = 0.5 * (P + P.T)
    return AugmentedEstimate(mean, P, est.k)


@dataclass
class DisturbanceObserver:
    """EKF settings for one agent plus its running estimate."""

    params: InertialParams = field(default_factory=InertialParams)
    dt: float = 0.1
    W: np.ndarray | None = None
    V: np.ndarray | None = None
    estimate_d_omega: bool = True
    estimate: AugmentedEstimate | None = None

    def __post_init__(self):
        if self.W is None:
            self.W = default_process_noise(self.estimate_d_omega)
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim == 1:
            self.W = np.diag(self.W)
        if self.V is None:
            self.V = default_measurement_noise()
        self.V = np.asarray(self.V, dtype=float)
        if self.V.ndim == 1:
            self.V = np.diag(self.V)

    def initialize(self, x, cov=None):
        est = AugmentedEstimate.from_state(x, cov)
        if not self.estimate_d_omega:
            est.cov[15:18, :] = 0.0
            est.cov[:, 15:18] = 0.0
        self.estimate = est
        return est

    def predict(self, u_applied):
        self.estimate = ekf_predict(self.estimate, u_applied, self.params, self.dt, self.W)
        return self.estimate

    def update(self, z: Measurement):
        self.estimate = ekf_update(self.estimate, z, self.V)
        return self.estimate


def offset_free_step(est: AugmentedEstimate, controller: Controller, z: Measurement, ref: Reference,
                     params: InertialParams | None = None, dt: float | None = None, W=None, V=None):
    """One tick of offset-free NMPC.

    Updates the estimate with ``z``, solves the NMPC from the updated mean
    with the disturbance frozen at its estimate over the horizon, then
    predicts the estimate forward with the applied input. The controller
    must use the ``wrench`` model. Returns ``(u_applied, new_estimate)``.
    """
    if controller.problem.kind != "wrench":
        raise EstimatorError("offset-free control needs a wrench-model controller")
    params = controller.problem.params if params is None else params
    dt = controller.problem.dt if dt is None else dt
    est = ekf_update(est, z, V)
    controller.set_disturbance(est.disturbance)
    u = controller.step(est.state, ref)
    est = ekf_predict(est, u, params, dt, W)
    return u, est
