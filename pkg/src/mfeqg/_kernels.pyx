# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; layouts documented in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()


def _c(a):
    # C-contiguous float64 that memoryviews accept (copies read-only views)
    return np.require(a, np.float64, ["C", "W"])


cdef inline void _matmul(const double* A, const double* B, double* out,
                         int r, int k, int c, bint transA, bint transB) nogil:
    # out (r x c) = op(A) (r x k) @ op(B) (k x c); all row-major
    cdef int i, j, l
    cdef double s
    for i in range(r):
        for j in range(c):
            s = 0.0
            for l in range(k):
                s += (A[l * r + i] if transA else A[i * k + l]) * \
                     (B[j * k + l] if transB else B[l * c + j])
            out[i * c + j] = s


cdef inline void _matvec(const double* A, const double* x, double* out,
                         int r, int c, bint transA) nogil:
    # out = op(A) @ x with op(A) of shape (r, c)
    cdef int i, l
    cdef double s
    for i in range(r):
        s = 0.0
        for l in range(c):
            s += (A[l * r + i] if transA else A[i * c + l]) * x[l]
        out[i] = s


cdef inline double _dot(const double* x, const double* y, int n) nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(n):
        s += x[i] * y[i]
    return s


cdef struct Consts:
    int d0
    int d
    double gamma
    double K0
    double K
    double* m0
    double* m
    double* S00
    double* Shat
    double* Schk
    double* S11
    double* work


cdef void _rhs(const double* y, const double* c, Consts* q, double* out) nogil:
    cdef int d0 = q.d0, d = q.d
    cdef int i, j
    cdef double g = q.gamma, K0 = q.K0, K = q.K
    cdef const double* A00 = y
    cdef const double* A11 = y + d0 * d0
    cdef const double* A10 = A11 + d * d
    cdef const double* B0 = A10 + d * d0
    cdef const double* B1 = B0 + d0
    cdef double C = B1[d]
    cdef double kt = c[0], gt = c[1]
    cdef const double* AF00 = c + 2
    cdef const double* AF11 = AF00 + d0 * d0
    cdef const double* AF10 = AF11 + d * d
    cdef const double* BF0 = AF10 + d * d0
    cdef const double* BF1 = BF0 + d0
    cdef double CF = BF1[d]
    cdef const double* mu = BF1 + d + 1

    cdef double* dA00 = out
    cdef double* dA11 = out + d0 * d0
    cdef double* dA10 = dA11 + d * d
    cdef double* dB0 = dA10 + d * d0
    cdef double* dB1 = dB0 + d0

    # scratch: sized for max(d0, d)^2 blocks
    cdef int D = d0 if d0 > d else d
    cdef double* A00S = q.work
    cdef double* A11S = A00S + D * D
    cdef double* A10tS11 = A11S + D * D
    cdef double* T1 = A10tS11 + D * D
    cdef double* T2 = T1 + D * D
    cdef double* v1 = T2 + D * D
    cdef double* v2 = v1 + D
    cdef double* v3 = v2 + D
    cdef double* T3 = v3 + D
    cdef double tmp, tr0, tr1

    _matmul(A00, q.S00, A00S, d0, d0, d0, False, False)
    _matmul(A11, q.S11, A11S, d, d, d, False, False)
    _matmul(A10, q.S11, A10tS11, d0, d, d, True, False)

    # dA00
    _matmul(A00S, A00, T1, d0, d0, d0, False, False)
    _matmul(A10tS11, A10, T2, d0, d, d0, False, False)
    for i in range(d0 * d0):
        dA00[i] = -g * T1[i] - g * T2[i] + (2 * K0 + kt) * A00[i] - kt * AF00[i]
    for i in range(d0):
        for j in range(i + 1, d0):
            tmp = 0.5 * (dA00[i * d0 + j] + dA00[j * d0 + i])
            dA00[i * d0 + j] = tmp
            dA00[j * d0 + i] = tmp

    # dA11
    _matmul(A11S, A11, T1, d, d, d, False, False)
    _matmul(A10, q.Schk, T2, d, d0, d0, False, False)
    _matmul(T2, A10, T3, d, d0, d, False, True)
    for i in range(d * d):
        dA11[i] = -g * T1[i] - g * T3[i] + (2 * K + kt) * A11[i] - kt * AF11[i]
    for i in range(d):
        for j in range(i + 1, d):
            tmp = 0.5 * (dA11[i * d + j] + dA11[j * d + i])
            dA11[i * d + j] = tmp
            dA11[j * d + i] = tmp

    # dA10
    _matmul(A10, q.S00, T1, d, d0, d0, False, False)
    _matmul(T1, A00, T2, d, d0, d0, False, False)
    _matmul(A11S, A10, T3, d, d, d0, False, False)
    for i in range(d * d0):
        dA10[i] = -g * T2[i] - g * T3[i] + (K0 + K + kt) * A10[i] - kt * AF10[i]

    # dB0
    _matvec(A00S, B0, v1, d0, d0, False)
    _matvec(A10tS11, B1, v2, d0, d, False)
    _matvec(A00, q.m0, v3, d0, d0, False)
    for i in range(d0):
        dB0[i] = -g * v1[i] + (kt + K0) * B0[i] - g * v2[i] - kt * BF0[i] - K0 * v3[i]
    _matvec(A10, q.m, v1, d0, d, True)
    for i in range(d0):
        dB0[i] -= K * v1[i]

    # dB1: A10 Shat A10^T mu, A10 S00 B0
    _matvec(A10, mu, v1, d0, d, True)          # A10^T mu   (d0)
    _matvec(q.Shat, v1, v2, d0, d0, False)     # Shat A10^T mu
    _matvec(A10, v2, v3, d, d0, False)         # A10 Shat A10^T mu (d)
    tmp = _dot(mu, v3, d)                      # mu^T A10 Shat A10^T mu
    _matvec(A11S, B1, v1, d, d, False)
    for i in range(d):
        dB1[i] = -g * v1[i] + (kt + K) * B1[i] - g * v3[i] - kt * BF1[i]
    _matvec(q.S00, B0, v1, d0, d0, False)
    _matvec(A10, v1, v2, d, d0, False)
    for i in range(d):
        dB1[i] -= g * v2[i]
    _matvec(A11, q.m, v1, d, d, False)
    _matvec(A10, q.m0, v2, d, d0, False)
    for i in range(d):
        dB1[i] -= K * v1[i] + K0 * v2[i]

    # dC
    tr0 = 0.0
    for i in range(d0):
        tr0 += A00S[i * d0 + i]
    tr1 = 0.0
    for i in range(d):
        tr1 += A11S[i * d + i]
    _matvec(q.S00, B0, v1, d0, d0, False)
    _matvec(q.S11, B1, v2, d, d, False)
    dB1[d] = (kt * C - kt * CF
              - 0.5 * g * _dot(B0, v1, d0) - 0.5 * g * _dot(B1, v2, d)
              - K0 * _dot(B0, q.m0, d0) - K * _dot(B1, q.m, d)
              + 0.5 * g * tmp - 0.5 * tr0 - 0.5 * tr1 - gt)


cdef inline void _symmetrize(double* y, int d0, int d) nogil:
    cdef int i, j
    cdef double tmp
    cdef double* A11 = y + d0 * d0
    for i in range(d0):
        for j in range(i + 1, d0):
            tmp = 0.5 * (y[i * d0 + j] + y[j * d0 + i])
            y[i * d0 + j] = tmp
            y[j * d0 + i] = tmp
    for i in range(d):
        for j in range(i + 1, d):
            tmp = 0.5 * (A11[i * d + j] + A11[j * d + i])
            A11[i * d + j] = tmp
            A11[j * d + i] = tmp


cdef int _setup(Consts* q, double gamma, double K0, double K,
                 double[::1] m0, double[::1] m, double[:, ::1] S00,
                 double[:, ::1] Shat, double[:, ::1] Schk, double[:, ::1] S11) except -1:
    q.d0 = S00.shape[0]
    q.d = S11.shape[0]
    q.gamma = gamma
    q.K0 = K0
    q.K = K
    q.m0 = &m0[0]
    q.m = &m[0]
    q.S00 = &S00[0, 0]
    q.Shat = &Shat[0, 0]
    q.Schk = &Schk[0, 0]
    q.S11 = &S11[0, 0]
    cdef int D = q.d0 if q.d0 > q.d else q.d
    q.work = <double*> malloc((6 * D * D + 4 * D + 8) * sizeof(double))
    if q.work == NULL:
        raise MemoryError()
    return 0


def riccati_rhs(y, c, double gamma, double K0, double K, m0, m, S00, Shat, Schk, S11):
    cdef double[::1] yv = _c(y)
    cdef double[::1] cv = _c(c)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(yv.shape[0])
    cdef double[::1] m0v = _c(m0)
    cdef double[::1] mv = _c(m)
    cdef double[:, ::1] S00v = _c(S00)
    cdef double[:, ::1] Shatv = _c(Shat)
    cdef double[:, ::1] Schkv = _c(Schk)
    cdef double[:, ::1] S11v = _c(S11)
    cdef Consts q
    _setup(&q, gamma, K0, K, m0v, mv, S00v, Shatv, Schkv, S11v)
    try:
        _rhs(&yv[0], &cv[0], &q, <double*> out.data)
    finally:
        free(q.work)
    return out


def rk4_backward(yT, coef, double dt, double gamma, double K0, double K,
                 m0, m, S00, Shat, Schk, S11, double threshold):
    cdef double[::1] y0 = _c(yT)
    cdef double[:, :, ::1] cf = _c(coef)
    cdef int P = y0.shape[0]
    cdef int M = cf.shape[0]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.full((M + 1, P), np.nan)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] m0v = _c(m0)
    cdef double[::1] mv = _c(m)
    cdef double[:, ::1] S00v = _c(S00)
    cdef double[:, ::1] Shatv = _c(Shat)
    cdef double[:, ::1] Schkv = _c(Schk)
    cdef double[:, ::1] S11v = _c(S11)
    cdef Consts q
    _setup(&q, gamma, K0, K, m0v, mv, S00v, Shatv, Schkv, S11v)
    cdef double* buf = <double*> malloc(6 * P * sizeof(double))
    if buf == NULL:
        free(q.work)
        raise MemoryError()
    cdef double* y = buf
    cdef double* k1 = buf + P
    cdef double* k2 = buf + 2 * P
    cdef double* k3 = buf + 3 * P
    cdef double* k4 = buf + 4 * P
    cdef double* ys = buf + 5 * P
    cdef double h = -dt
    cdef int i, k, bad = -1
    cdef int d0 = q.d0, d = q.d
    try:
        for i in range(P):
            y[i] = y0[i]
            out[M, i] = y0[i]
        with nogil:
            for k in range(M - 1, -1, -1):
                _rhs(y, &cf[k, 0, 0], &q, k1)
                for i in range(P):
                    ys[i] = y[i] + 0.5 * h * k1[i]
                _symmetrize(ys, d0, d)
                _rhs(ys, &cf[k, 1, 0], &q, k2)
                for i in range(P):
                    ys[i] = y[i] + 0.5 * h * k2[i]
                _symmetrize(ys, d0, d)
                _rhs(ys, &cf[k, 1, 0], &q, k3)
                for i in range(P):
                    ys[i] = y[i] + h * k3[i]
                _symmetrize(ys, d0, d)
                _rhs(ys, &cf[k, 2, 0], &q, k4)
                for i in range(P):
                    y[i] = y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                _symmetrize(y, d0, d)
                for i in range(P):
                    if not isfinite(y[i]) or fabs(y[i]) > threshold:
                        bad = k
                        break
                if bad >= 0:
                    break
                for i in range(P):
                    out[k, i] = y[i]
    finally:
        free(buf)
        free(q.work)
    return out_arr, bad


def ou_euler(x_init, dW, double K, m, Sigma, double dt):
    cdef double[:, ::1] x0 = _c(x_init)
    cdef double[:, :, ::1] w = _c(dW)
    cdef double[::1] mv = _c(m)
    cdef double[:, ::1] S = _c(Sigma)
    cdef Py_ssize_t P = w.shape[0], M = w.shape[1], q = w.shape[2]
    cdef cnp.ndarray[double, ndim=3] out_arr = np.empty((P, M + 1, q))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, k, i, j
    cdef double s
    with nogil:
        for p in range(P):
            for i in range(q):
                out[p, 0, i] = x0[p, i]
            for k in range(M):
                for i in range(q):
                    s = 0.0
                    for j in range(q):
                        s = s + S[i, j] * w[p, k, j]
                    out[p, k + 1, i] = out[p, k, i] - K * (out[p, k, i] - mv[i]) * dt + s
    return out_arr


def habit_closed_loop(Y, F, X0, zeta, logterm, rho, double gamma, double beta,
                      double kappa, double b, double dt):
    cdef double[:, ::1] Yv = _c(Y)
    cdef double[:, ::1] Fv = _c(F)
    cdef double[::1] X0v = _c(X0)
    cdef double[::1] z = _c(zeta)
    cdef double[::1] L = _c(logterm)
    cdef double[::1] r = _c(rho)
    cdef Py_ssize_t P = Yv.shape[0], M1 = Yv.shape[1]
    cdef cnp.ndarray[double, ndim=2] X_arr = np.empty((P, M1))
    cdef cnp.ndarray[double, ndim=2] c_arr = np.empty((P, M1))
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] c = c_arr
    cdef Py_ssize_t p, k
    cdef double x, ck
    with nogil:
        for p in range(P):
            x = X0v[p]
            for k in range(M1):
                X[p, k] = x
                ck = x + (L[k] - gamma * (Yv[p, k] - Fv[p, k] + z[k] * x)) / beta
                c[p, k] = ck
                if k < M1 - 1:
                    x = x + (-kappa * (x - r[k]) + b * (ck - r[k])) * dt
    return X_arr, c_arr


def habit_open_loop(c, X0, rho, double kappa, double b, double dt):
    cdef double[:, ::1] cv = _c(c)
    cdef double[::1] X0v = _c(X0)
    cdef double[::1] r = _c(rho)
    cdef Py_ssize_t P = cv.shape[0], M1 = cv.shape[1]
    cdef cnp.ndarray[double, ndim=2] X_arr = np.empty((P, M1))
    cdef double[:, ::1] X = X_arr
    cdef Py_ssize_t p, k
    cdef double x
    with nogil:
        for p in range(P):
            x = X0v[p]
            for k in range(M1):
                X[p, k] = x
                if k < M1 - 1:
                    x = x + (-kappa * (x - r[k]) + b * (cv[p, k] - r[k])) * dt
    return X_arr
