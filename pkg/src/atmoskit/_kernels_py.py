"""Pure-numpy implementations of the hot kernels.

These mirror ``_core.pyx`` one-to-one and are selected by
:mod:`atmoskit.kernels` when the compiled extension is unavailable.

The RK4 kernels return the discrete map and its exact Jacobians, obtained
by propagating forward-mode sensitivities through the four stages and the
final quaternion renormalization.
"""
import numpy as np

_I3 = np.eye(3)


def _skew_batch(a):
    K = a.shape[0]
    S = np.zeros((K, 3, 3))
    S[:, 0, 1] = -a[:, 2]
    S[:, 0, 2] = a[:, 1]
    S[:, 1, 0] = a[:, 2]
    S[:, 1, 2] = -a[:, 0]
    S[:, 2, 0] = -a[:, 1]
    S[:, 2, 1] = a[:, 0]
    return S


def _rot_force(q, F, jac):
    """``R(q).T @ F`` for unnormalized ``q`` and, optionally, d/dq (K,3,4)."""
    qw = q[:, 0]
    qv = q[:, 1:]
    qvF = np.einsum("ki,ki->k", qv, F)
    cr = np.cross(qv, F)
    out = (qw * qw - np.einsum("ki,ki->k", qv, qv))[:, None] * F + 2.0 * qw[:, None] * cr \
        + 2.0 * qvF[:, None] * qv
    if not jac:
        return out, None, None
    K = q.shape[0]
    dq = np.empty((K, 3, 4))
    dq[:, :, 0] = 2.0 * qw[:, None] * F + 2.0 * cr
    dq[:, :, 1:] = (-2.0 * np.einsum("ki,kj->kij", F, qv) + 2.0 * qvF[:, None, None] * _I3
                    + 2.0 * np.einsum("ki,kj->kij", qv, F) - 2.0 * qw[:, None, None] * _skew_batch(F))
    w2 = (qw * qw - np.einsum("ki,ki->k", qv, qv))[:, None, None]
    R = w2 * _I3 + 2.0 * qw[:, None, None] * _skew_batch(qv) + 2.0 * np.einsum("ki,kj->kij", qv, qv)
    return out, dq, R


def _quat_rate(q, om, jac):
    qw = q[:, 0]
    qv = q[:, 1:]
    qd = np.empty_like(q)
    qd[:, 0] = -0.5 * np.einsum("ki,ki->k", qv, om)
    qd[:, 1:] = 0.5 * (qw[:, None] * om + np.cross(qv, om))
    if not jac:
        return qd, None, None
    K = q.shape[0]
    dq = np.zeros((K, 4, 4))
    dq[:, 0, 1:] = -0.5 * om
    dq[:, 1:, 0] = 0.5 * om
    dq[:, 1:, 1:] = -0.5 * _skew_batch(om)
    dom = np.empty((K, 4, 3))
    dom[:, 0, :] = -0.5 * qv
    dom[:, 1:, :] = 0.5 * (qw[:, None, None] * _I3 + _skew_batch(qv))
    return qd, dq, dom


def _wrench_f(X, U, d, m, M, Minv, jac):
    K = X.shape[0]
    q = X[:, 6:10]
    om = X[:, 10:13]
    xd = np.empty_like(X)
    xd[:, 0:3] = X[:, 3:6]
    a, da_dq, R = _rot_force(q, U[:, 0:3], jac)
    xd[:, 3:6] = a / m + d[0:3]
    qd, dqd_dq, dqd_dom = _quat_rate(q, om, jac)
    xd[:, 6:10] = qd
    Mom = om @ M.T
    xd[:, 10:13] = (U[:, 3:6] - np.cross(om, Mom)) @ Minv.T + d[3:6]
    if not jac:
        return xd, None, None
    fx = np.zeros((K, 13, 13))
    fu = np.zeros((K, 13, 6))
    fx[:, 0:3, 3:6] = _I3
    fx[:, 3:6, 6:10] = da_dq / m
    fx[:, 6:10, 6:10] = dqd_dq
    fx[:, 6:10, 10:13] = dqd_dom
    gyro = _skew_batch(om) @ M - _skew_batch(Mom)
    fx[:, 10:13, 10:13] = -np.einsum("ij,kjl->kil", Minv, gyro)
    fu[:, 3:6, 0:3] = R / m
    fu[:, 10:13, 3:6] = Minv
    return xd, fx, fu


def _rate_f(X, U, dv, m, jac):
    K = X.shape[0]
    q = X[:, 6:10]
    xd = np.empty_like(X)
    xd[:, 0:3] = X[:, 3:6]
    a, da_dq, R = _rot_force(q, U[:, 0:3], jac)
    xd[:, 3:6] = a / m + dv
    qd, dqd_dq, dqd_dom = _quat_rate(q, U[:, 3:6], jac)
    xd[:, 6:10] = qd
    if not jac:
        return xd, None, None
    fx = np.zeros((K, 10, 10))
    fu = np.zeros((K, 10, 6))
    fx[:, 0:3, 3:6] = _I3
    fx[:, 3:6, 6:10] = da_dq / m
    fx[:, 6:10, 6:10] = dqd_dq
    fu[:, 3:6, 0:3] = R / m
    fu[:, 6:10, 3:6] = dqd_dom
    return xd, fx, fu


def _rk4(f, X, U, dt, jac):
    K, nx = X.shape
    nu = U.shape[1]
    h = dt
    k1, J1x, J1u = f(X, jac)
    k2, J2x, J2u = f(X + 0.5 * h * k1, jac)
    k3, J3x, J3u = f(X + 0.5 * h * k2, jac)
    k4, J4x, J4u = f(X + h * k3, jac)
    Xn = X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    qn = Xn[:, 6:10]
    nrm = np.sqrt(np.einsum("ki,ki->k", qn, qn))
    qhat = qn / nrm[:, None]
    Xn[:, 6:10] = qhat
    if not jac:
        return Xn, None, None
    I = np.eye(nx)
    d1x, d1u = J1x, J1u
    d2x = J2x @ (I + 0.5 * h * d1x)
    d2u = J2x @ (0.5 * h * d1u) + J2u
    d3x = J3x @ (I + 0.5 * h * d2x)
    d3u = J3x @ (0.5 * h * d2u) + J3u
    d4x = J4x @ (I + h * d3x)
    d4u = J4x @ (h * d3u) + J4u
    A = I + h / 6.0 * (d1x + 2.0 * d2x + 2.0 * d3x + d4x)
    B = h / 6.0 * (d1u + 2.0 * d2u + 2.0 * d3u + d4u)
    Pn = (np.eye(4) - np.einsum("ki,kj->kij", qhat, qhat)) / nrm[:, None, None]
    A[:, 6:10, :] = Pn @ A[:, 6:10, :]
    B[:, 6:10, :] = Pn @ B[:, 6:10, :]
    return Xn, A, B


def wrench_rk4(X, U, d, m, M, Minv, dt, jac=True):
    """Batched RK4 of the disturbed wrench model: ``X (K,13)``, ``U (K,6)``."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    d = np.asarray(d, dtype=float)
    return _rk4(lambda Z, j: _wrench_f(Z, U, d, m, M, Minv, j), X, U, dt, jac)


def rate_rk4(X, U, dv, m, dt, jac=True):
    """Batched RK4 of the force/rate model: ``X (K,10)``, ``U (K,6)``."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    dv = np.asarray(dv, dtype=float)
    return _rk4(lambda Z, j: _rate_f(Z, U, dv, m, j), X, U, dt, jac)


def dual_ratio(w, lam, side, sigma, ws, piv_tol, bland):
    """Dual ratio test of the bounded dual simplex.

    Returns ``(r, t)``: the basis position leaving and the dual step length,
    or ``(-1, inf)`` when no multiplier blocks (primal infeasible). Among
    near-ties the largest pivot wins, or the lowest constraint index under
    Bland's rule.
    """
    s = side.astype(float)
    a = s * sigma * w
    ok = (side != 0) & (a > piv_tol)
    if not ok.any():
        return -1, np.inf
    idx = np.flatnonzero(ok)
    ratio = np.maximum(s[idx] * lam[idx], 0.0) / a[idx]
    tmin = ratio.min()
    near = idx[ratio <= tmin + 1e-12]
    if bland:
        r = near[np.argmin(ws[near])]
    else:
        r = near[np.argmax(a[near])]
    return int(r), float(tmin)


def rank1_update(Binv, d, w, r, wr):
    """In-place basis-inverse update after swapping the row at position ``r``."""
    v = w / wr
    v[r] -= 1.0 / wr
    Binv -= np.outer(d, v)
