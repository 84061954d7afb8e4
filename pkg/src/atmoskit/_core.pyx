# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: batched RK4 with exact sensitivities and the
dual-simplex ratio test and basis update.

Semantics match ``_kernels_py`` exactly; the parity tests compare both.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from libc.string cimport memset, memcpy

cnp.import_array()

cdef enum:
    NXMAX = 13
    NU = 6


cdef inline void _matmul(const double* A, const double* B, double* C, int n, int k, int m) noexcept nogil:
    """C (n x m) = A (n x k) @ B (k x m), all row-major."""
    cdef int i, j, l
    cdef double a
    memset(C, 0, n * m * sizeof(double))
    for i in range(n):
        for l in range(k):
            a = A[i * k + l]
            if a != 0.0:
                for j in range(m):
                    C[i * m + j] += a * B[l * m + j]


cdef inline void _skew(const double* a, double* S) noexcept nogil:
    S[0] = 0.0;   S[1] = -a[2]; S[2] = a[1]
    S[3] = a[2];  S[4] = 0.0;   S[5] = -a[0]
    S[6] = -a[1]; S[7] = a[0];  S[8] = 0.0


cdef void _stage(int nx, const double* z, const double* u, const double* d, double m,
                 const double* M, const double* Minv, double* xd, double* fx, double* fu,
                 bint jac) noexcept nogil:
    """Continuous-time derivative of the wrench (nx=13) or rate (nx=10) model."""
    cdef double qw = z[6]
    cdef const double* qv = z + 7
    cdef const double* F = u
    cdef const double* om
    cdef double w2, qvF, cr[3], out[3], Mom[3], tmp[3], gyro[9], Sf[9], Sv[9], So[9], SMo[9]
    cdef int i, j, l
    if nx == 13:
        om = z + 10
    else:
        om = u + 3
    w2 = qw * qw - (qv[0] * qv[0] + qv[1] * qv[1] + qv[2] * qv[2])
    qvF = qv[0] * F[0] + qv[1] * F[1] + qv[2] * F[2]
    cr[0] = qv[1] * F[2] - qv[2] * F[1]
    cr[1] = qv[2] * F[0] - qv[0] * F[2]
    cr[2] = qv[0] * F[1] - qv[1] * F[0]
    for i in range(3):
        out[i] = w2 * F[i] + 2.0 * qw * cr[i] + 2.0 * qvF * qv[i]
        xd[i] = z[3 + i]
        xd[3 + i] = out[i] / m + d[i]
    # quaternion rate
    xd[6] = -0.5 * (qv[0] * om[0] + qv[1] * om[1] + qv[2] * om[2])
    xd[7] = 0.5 * (qw * om[0] + qv[1] * om[2] - qv[2] * om[1])
    xd[8] = 0.5 * (qw * om[1] + qv[2] * om[0] - qv[0] * om[2])
    xd[9] = 0.5 * (qw * om[2] + qv[0] * om[1] - qv[1] * om[0])
    if nx == 13:
        for i in range(3):
            Mom[i] = M[3 * i] * om[0] + M[3 * i + 1] * om[1] + M[3 * i + 2] * om[2]
        tmp[0] = u[3] - (om[1] * Mom[2] - om[2] * Mom[1])
        tmp[1] = u[4] - (om[2] * Mom[0] - om[0] * Mom[2])
        tmp[2] = u[5] - (om[0] * Mom[1] - om[1] * Mom[0])
        for i in range(3):
            xd[10 + i] = Minv[3 * i] * tmp[0] + Minv[3 * i + 1] * tmp[1] + Minv[3 * i + 2] * tmp[2] + d[3 + i]
    if not jac:
        return
    memset(fx, 0, nx * nx * sizeof(double))
    memset(fu, 0, nx * NU * sizeof(double))
    for i in range(3):
        fx[i * nx + 3 + i] = 1.0
    # d(R'F)/dq
    _skew(F, Sf)
    _skew(qv, Sv)
    for i in range(3):
        fx[(3 + i) * nx + 6] = (2.0 * qw * F[i] + 2.0 * cr[i]) / m
        for j in range(3):
            fx[(3 + i) * nx + 7 + j] = (-2.0 * F[i] * qv[j] + (2.0 * qvF if i == j else 0.0)
                                        + 2.0 * qv[i] * F[j] - 2.0 * qw * Sf[3 * i + j]) / m
            fu[(3 + i) * NU + j] = (w2 * (1.0 if i == j else 0.0) + 2.0 * qw * Sv[3 * i + j]
                                    + 2.0 * qv[i] * qv[j]) / m
    # quaternion rate Jacobians
    _skew(om, So)
    for j in range(3):
        fx[6 * nx + 7 + j] = -0.5 * om[j]
        fx[(7 + j) * nx + 6] = 0.5 * om[j]
        for l in range(3):
            fx[(7 + j) * nx + 7 + l] = -0.5 * So[3 * j + l]
    if nx == 13:
        for j in range(3):
            fx[6 * nx + 10 + j] = -0.5 * qv[j]
            for l in range(3):
                fx[(7 + j) * nx + 10 + l] = 0.5 * ((qw if j == l else 0.0) + Sv[3 * j + l])
        # gyroscopic term: -Minv (skew(om) M - skew(M om))
        _skew(Mom, SMo)
        for i in range(3):
            for j in range(3):
                gyro[3 * i + j] = -SMo[3 * i + j]
                for l in range(3):
                    gyro[3 * i + j] += So[3 * i + l] * M[3 * l + j]
        for i in range(3):
            for j in range(3):
                fx[(10 + i) * nx + 10 + j] = -(Minv[3 * i] * gyro[j] + Minv[3 * i + 1] * gyro[3 + j]
                                              + Minv[3 * i + 2] * gyro[6 + j])
                fu[(10 + i) * NU + 3 + j] = Minv[3 * i + j]
    else:
        for j in range(3):
            fu[6 * NU + 3 + j] = -0.5 * qv[j]
            for l in range(3):
                fu[(7 + j) * NU + 3 + l] = 0.5 * ((qw if j == l else 0.0) + Sv[3 * j + l])


cdef void _rk4_one(int nx, const double* x, const double* u, const double* d, double m,
                   const double* M, const double* Minv, double h, double* xn, double* A,
                   double* B, bint jac) noexcept nogil:
    cdef double k1[NXMAX], k2[NXMAX], k3[NXMAX], k4[NXMAX], z[NXMAX]
    cdef double Jx[NXMAX * NXMAX], Ju[NXMAX * NU]
    cdef double dx1[NXMAX * NXMAX], dx2[NXMAX * NXMAX], dx3[NXMAX * NXMAX], dx4[NXMAX * NXMAX]
    cdef double du1[NXMAX * NU], du2[NXMAX * NU], du3[NXMAX * NU], du4[NXMAX * NU]
    cdef double T[NXMAX * NXMAX], Tu[NXMAX * NU], P4[16], tmp[4 * NXMAX]
    cdef double nrm, c
    cdef int i, j, l, nn = nx * nx, nb = nx * NU
    # stage 1
    _stage(nx, x, u, d, m, M, Minv, k1, dx1, du1, jac)
    for i in range(nx):
        z[i] = x[i] + 0.5 * h * k1[i]
    _stage(nx, z, u, d, m, M, Minv, k2, Jx, Ju, jac)
    if jac:
        for i in range(nn):
            T[i] = 0.5 * h * dx1[i]
        for i in range(nx):
            T[i * nx + i] += 1.0
        _matmul(Jx, T, dx2, nx, nx, nx)
        for i in range(nb):
            Tu[i] = 0.5 * h * du1[i]
        _matmul(Jx, Tu, du2, nx, nx, NU)
        for i in range(nb):
            du2[i] += Ju[i]
    for i in range(nx):
        z[i] = x[i] + 0.5 * h * k2[i]
    _stage(nx, z, u, d, m, M, Minv, k3, Jx, Ju, jac)
    if jac:
        for i in range(nn):
            T[i] = 0.5 * h * dx2[i]
        for i in range(nx):
            T[i * nx + i] += 1.0
        _matmul(Jx, T, dx3, nx, nx, nx)
        for i in range(nb):
            Tu[i] = 0.5 * h * du2[i]
        _matmul(Jx, Tu, du3, nx, nx, NU)
        for i in range(nb):
            du3[i] += Ju[i]
    for i in range(nx):
        z[i] = x[i] + h * k3[i]
    _stage(nx, z, u, d, m, M, Minv, k4, Jx, Ju, jac)
    if jac:
        for i in range(nn):
            T[i] = h * dx3[i]
        for i in range(nx):
            T[i * nx + i] += 1.0
        _matmul(Jx, T, dx4, nx, nx, nx)
        for i in range(nb):
            Tu[i] = h * du3[i]
        _matmul(Jx, Tu, du4, nx, nx, NU)
        for i in range(nb):
            du4[i] += Ju[i]
    for i in range(nx):
        xn[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    nrm = sqrt(xn[6] * xn[6] + xn[7] * xn[7] + xn[8] * xn[8] + xn[9] * xn[9])
    for i in range(6, 10):
        xn[i] /= nrm
    if not jac:
        return
    for i in range(nn):
        A[i] = h / 6.0 * (dx1[i] + 2.0 * dx2[i] + 2.0 * dx3[i] + dx4[i])
    for i in range(nx):
        A[i * nx + i] += 1.0
    for i in range(nb):
        B[i] = h / 6.0 * (du1[i] + 2.0 * du2[i] + 2.0 * du3[i] + du4[i])
    # renormalization: rows 6:10 premultiplied by (I - qq') / |q|
    for i in range(4):
        for j in range(4):
            P4[4 * i + j] = ((1.0 if i == j else 0.0) - xn[6 + i] * xn[6 + j]) / nrm
    _matmul(P4, A + 6 * nx, tmp, 4, 4, nx)
    memcpy(A + 6 * nx, tmp, 4 * nx * sizeof(double))
    _matmul(P4, B + 6 * NU, tmp, 4, 4, NU)
    memcpy(B + 6 * NU, tmp, 4 * NU * sizeof(double))


def _run(int nx, X, U, d, double m, M, Minv, double dt, bint jac):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Uc = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] dc = np.zeros(6)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Mc = np.ascontiguousarray(M, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Mic = np.ascontiguousarray(Minv, dtype=np.float64)
    dd = np.asarray(d, dtype=np.float64).ravel()
    dc[:dd.shape[0]] = dd
    cdef Py_ssize_t K = Xc.shape[0], k
    if Xc.shape[1] != nx or Uc.shape[0] != K or Uc.shape[1] != NU:
        raise ValueError("state or input batch has the wrong shape")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xn = np.empty((K, nx))
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] A
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] B
    cdef double* pa = NULL
    cdef double* pb = NULL
    if jac:
        A = np.empty((K, nx, nx))
        B = np.empty((K, nx, NU))
    else:
        A = np.empty((1, 1, 1))
        B = np.empty((1, 1, 1))
    with nogil:
        for k in range(K):
            if jac:
                pa = &A[k, 0, 0]
                pb = &B[k, 0, 0]
            _rk4_one(nx, &Xc[k, 0], &Uc[k, 0], &dc[0], m, &Mc[0, 0], &Mic[0, 0], dt,
                     &Xn[k, 0], pa, pb, jac)
    if jac:
        return Xn, A, B
    return Xn, None, None


def wrench_rk4(X, U, d, double m, M, Minv, double dt, bint jac=True):
    """Batched RK4 of the disturbed wrench model: ``X (K,13)``, ``U (K,6)``."""
    return _run(13, X, U, d, m, M, Minv, dt, jac)


def rate_rk4(X, U, dv, double m, double dt, bint jac=True):
    """Batched RK4 of the force/rate model: ``X (K,10)``, ``U (K,6)``."""
    I3 = np.eye(3)
    return _run(10, X, U, dv, m, I3, I3, dt, jac)


def dual_ratio(double[::1] w, double[::1] lam, side, double sigma, ws, double piv_tol, bint bland):
    """Dual ratio test of the bounded dual simplex (see ``_kernels_py.dual_ratio``)."""
    cdef long[::1] sd = np.ascontiguousarray(side, dtype=np.int64)
    cdef long[::1] wsv = np.ascontiguousarray(ws, dtype=np.int64)
    cdef Py_ssize_t n = w.shape[0], i
    cdef double a, s, ratio, tmin = INFINITY
    cdef int found = 0
    # first pass: minimum ratio
    for i in range(n):
        if sd[i] == 0:
            continue
        s = <double>sd[i]
        a = s * sigma * w[i]
        if a > piv_tol:
            ratio = s * lam[i]
            if ratio < 0.0:
                ratio = 0.0
            ratio /= a
            if ratio < tmin:
                tmin = ratio
            found = 1
    if not found:
        return -1, float("inf")
    # second pass: tie-break among near-minimal ratios
    cdef Py_ssize_t best = -1
    cdef double best_a = -1.0
    cdef long best_ws = 0
    for i in range(n):
        if sd[i] == 0:
            continue
        s = <double>sd[i]
        a = s * sigma * w[i]
        if a > piv_tol:
            ratio = s * lam[i]
            if ratio < 0.0:
                ratio = 0.0
            ratio /= a
            if ratio <= tmin + 1e-12:
                if bland:
                    if best < 0 or wsv[i] < best_ws:
                        best, best_ws = i, wsv[i]
                elif a > best_a:
                    best, best_a = i, a
    return int(best), float(tmin)


def rank1_update(double[:, ::1] Binv, double[::1] d, double[::1] w, Py_ssize_t r, double wr):
    """In-place ``Binv -= outer(d, v)`` with ``v = w / wr`` and ``v[r] -= 1 / wr``."""
    cdef Py_ssize_t n = Binv.shape[0], m = Binv.shape[1], i, j
    cdef double di
    cdef double[::1] v = np.empty(m)
    for j in range(m):
        v[j] = w[j] / wr
    v[r] -= 1.0 / wr
    with nogil:
        for i in range(n):
            di = d[i]
            if di != 0.0:
                for j in range(m):
                    Binv[i, j] -= di * v[j]
