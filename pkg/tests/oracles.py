"""Independent element-by-element references used by several test modules."""

import numpy as np

from mfeqg.model import discount_rate, g_tilde


def mat(A, B):
    n, k = len(A), len(B[0])
    return [[sum(A[i][l] * B[l][j] for l in range(len(B))) for j in range(k)] for i in range(n)]


def tr(A):
    return [[A[j][i] for j in range(len(A))] for i in range(len(A[0]))]


def vec(A, x):
    return [sum(A[i][j] * x[j] for j in range(len(x))) for i in range(len(A))]


def dot(x, y):
    return sum(a * b for a, b in zip(x, y))


def riccati_rhs_loops(t, state, params, factors, liab):
    """Derivative of (A00, A11, A10, B0, B1, C) written with plain lists."""
    g = params.gamma
    k = float(discount_rate(params, t))
    gt = float(g_tilde(params, t))
    K0, K = factors.K0, factors.K
    n = factors.n
    S0 = factors.Sigma0.tolist()
    d0 = len(S0)
    hat = [[S0[i][j] if j < n else 0.0 for j in range(d0)] for i in range(d0)]
    chk = [[S0[i][j] if j >= n else 0.0 for j in range(d0)] for i in range(d0)]
    S00 = mat(S0, tr(S0))
    Sh = mat(hat, tr(hat))
    Sc = mat(chk, tr(chk))
    S11 = mat(factors.Sigma.tolist(), tr(factors.Sigma.tolist()))
    A00, A11, A10, B0, B1, C = [np.asarray(s).tolist() for s in state]
    AF00, AF11, AF10, BF0, BF1, CF = [np.asarray(v).tolist() for v in liab.at(t)]
    m0, m = factors.m0.tolist(), factors.m.tolist()
    mu = (factors.meanx0i * np.exp(-K * t) + factors.m * (1 - np.exp(-K * t))).tolist()
    A10T = tr(A10)

    def lin(X, c, Y, coef):
        return [[c * X[i][j] - coef * Y[i][j] for j in range(len(X[0]))] for i in range(len(X))]

    def add(*Ms):
        return [[sum(M[i][j] for M in Ms) for j in range(len(Ms[0][0]))] for i in range(len(Ms[0]))]

    def sc(c, X):
        return [[c * v for v in row] for row in X]

    dA00 = add(sc(-g, mat(mat(A00, S00), A00)), sc(-g, mat(mat(A10T, S11), A10)),
               lin(A00, 2 * K0 + k, AF00, k))
    dA11 = add(sc(-g, mat(mat(A11, S11), A11)), sc(-g, mat(mat(A10, Sc), A10T)),
               lin(A11, 2 * K + k, AF11, k))
    dA10 = add(sc(-g, mat(mat(A10, S00), A00)), sc(-g, mat(mat(A11, S11), A10)),
               lin(A10, K0 + K + k, AF10, k))
    v1 = vec(mat(A00, S00), B0)
    v2 = vec(mat(A10T, S11), B1)
    v3 = vec(A00, m0)
    v4 = vec(A10T, m)
    dB0 = [-g * v1[i] + (k + K0) * B0[i] - g * v2[i] - k * BF0[i] - K0 * v3[i] - K * v4[i]
           for i in range(len(B0))]
    w1 = vec(mat(A11, S11), B1)
    w2 = vec(mat(mat(A10, Sh), A10T), mu)
    w3 = vec(mat(A10, S00), B0)
    w4 = vec(A11, m)
    w5 = vec(A10, m0)
    dB1 = [-g * w1[i] + (k + K) * B1[i] - g * (w2[i] + w3[i]) - k * BF1[i] - K * w4[i]
           - K0 * w5[i] for i in range(len(B1))]
    trace00 = sum(mat(A00, S00)[i][i] for i in range(len(A00)))
    trace11 = sum(mat(A11, S11)[i][i] for i in range(len(A11)))
    dC = (k * C - k * CF - g / 2 * dot(B0, vec(S00, B0)) - g / 2 * dot(B1, vec(S11, B1))
          - K0 * dot(B0, m0) - K * dot(B1, m) + g / 2 * dot(mu, w2)
          - 0.5 * trace00 - 0.5 * trace11 - gt)
    return [np.array(x) for x in (dA00, dA11, dA10, dB0, dB1)] + [dC]


def integrating_factor_C(params, t_eval, fine=400000):
    """C(t) for the scalar linear ODE C' = k(t) C - g_tilde(t), C(T) = 0,
    from the explicit formula C(t) = e^{I(t)} int_t^T e^{-I(s)} g_tilde(s) ds
    with I(t) = int_0^t k, evaluated by fine cumulative trapezoid sums."""
    s = np.linspace(0.0, params.T, fine + 1)
    k = discount_rate(params, s)
    I = np.concatenate([[0.0], np.cumsum(0.5 * (k[1:] + k[:-1]) * np.diff(s))])
    integrand = np.exp(-I) * g_tilde(params, s)
    J = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s))])
    tail = J[-1] - np.interp(t_eval, s, J)
    return np.exp(np.interp(t_eval, s, I)) * tail


def quadratic_form_loops(coeffs, x0, xi):
    A00, A11, A10, B0, B1, C = [np.asarray(c) for c in coeffs]
    total = float(C)
    for i in range(len(x0)):
        for j in range(len(x0)):
            total += 0.5 * A00[i, j] * x0[i] * x0[j]
        total += B0[i] * x0[i]
    for i in range(len(xi)):
        for j in range(len(xi)):
            total += 0.5 * A11[i, j] * xi[i] * xi[j]
        for j in range(len(x0)):
            total += A10[i, j] * xi[i] * x0[j]
        total += B1[i] * xi[i]
    return total


def rk4_zeta(params, steps):
    """Backward RK4 for the habit Riccati ODE from zeta_T = 0."""
    c1 = params.kappa - params.b + params.gamma / params.beta
    c2 = params.gamma * params.b / params.beta

    def f(z):
        return c1 * z + c2 * z * z - 1.0

    h = -params.T / steps
    out = np.empty(steps + 1)
    z = 0.0
    out[steps] = z
    for k in range(steps - 1, -1, -1):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = z
    return out
