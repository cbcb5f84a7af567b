"""Pure-numpy reference kernels.

Same signatures and array layouts as the compiled ``_kernels`` module; used
when the extension is not built or when MFG_EQG_PURE_PYTHON=1.

Packed Riccati state layout (length P):
    A00 (d0*d0, row-major) | A11 (d*d) | A10 (d*d0) | B0 (d0) | B1 (d) | C
Packed time coefficients (length Q):
    kt | gt | AF00 | AF11 | AF10 | BF0 | BF1 | CF | mu (d)
where kt = gamma (1 + b zeta_t) / beta, gt = g_tilde(t) and mu is the mean of
the idiosyncratic factor.
"""

import numpy as np


def _split_state(y, d0, d):
    i = 0
    A00 = y[i:i + d0 * d0].reshape(d0, d0); i += d0 * d0
    A11 = y[i:i + d * d].reshape(d, d); i += d * d
    A10 = y[i:i + d * d0].reshape(d, d0); i += d * d0
    B0 = y[i:i + d0]; i += d0
    B1 = y[i:i + d]; i += d
    return A00, A11, A10, B0, B1, y[i]


def _split_coef(c, d0, d):
    i = 2
    AF00 = c[i:i + d0 * d0].reshape(d0, d0); i += d0 * d0
    AF11 = c[i:i + d * d].reshape(d, d); i += d * d
    AF10 = c[i:i + d * d0].reshape(d, d0); i += d * d0
    BF0 = c[i:i + d0]; i += d0
    BF1 = c[i:i + d]; i += d
    CF = c[i]; i += 1
    mu = c[i:i + d]
    return c[0], c[1], AF00, AF11, AF10, BF0, BF1, CF, mu


def riccati_rhs(y, c, gamma, K0, K, m0, m, S00, Shat, Schk, S11):
    """Time derivative of the packed Riccati state."""
    d0 = S00.shape[0]
    d = S11.shape[0]
    A00, A11, A10, B0, B1, C = _split_state(y, d0, d)
    kt, gt, AF00, AF11, AF10, BF0, BF1, CF, mu = _split_coef(c, d0, d)

    A00S = A00 @ S00
    A11S = A11 @ S11
    A10tS11 = A10.T @ S11

    dA00 = -gamma * (A00S @ A00) - gamma * (A10tS11 @ A10) + (2 * K0 + kt) * A00 - kt * AF00
    dA11 = (
        -gamma * (A11S @ A11) - gamma * (A10 @ Schk @ A10.T)
        + (2 * K + kt) * A11 - kt * AF11
    )
    dA10 = (
        -gamma * (A10 @ S00 @ A00) - gamma * (A11S @ A10)
        + (K0 + K + kt) * A10 - kt * AF10
    )
    dB0 = (
        -gamma * (A00S @ B0) + (kt + K0) * B0 - gamma * (A10tS11 @ B1)
        - kt * BF0 - K0 * (A00 @ m0) - K * (A10.T @ m)
    )
    A10Shat = A10 @ Shat
    dB1 = (
        -gamma * (A11S @ B1) + (kt + K) * B1
        - gamma * (A10Shat @ (A10.T @ mu) + A10 @ (S00 @ B0))
        - kt * BF1 - K * (A11 @ m) - K0 * (A10 @ m0)
    )
    dC = (
        kt * C - kt * CF
        - 0.5 * gamma * (B0 @ S00 @ B0) - 0.5 * gamma * (B1 @ S11 @ B1)
        - K0 * (B0 @ m0) - K * (B1 @ m)
        + 0.5 * gamma * (mu @ A10Shat @ (A10.T @ mu))
        - 0.5 * np.trace(A00S) - 0.5 * np.trace(A11S) - gt
    )
    dA00 = 0.5 * (dA00 + dA00.T)
    dA11 = 0.5 * (dA11 + dA11.T)
    return np.concatenate(
        [dA00.ravel(), dA11.ravel(), dA10.ravel(), dB0, dB1, [dC]]
    )


def _symmetrize(y, d0, d):
    A00 = y[:d0 * d0].reshape(d0, d0)
    A00[...] = 0.5 * (A00 + A00.T)
    A11 = y[d0 * d0:d0 * d0 + d * d].reshape(d, d)
    A11[...] = 0.5 * (A11 + A11.T)
    return y


def rk4_backward(yT, coef, dt, gamma, K0, K, m0, m, S00, Shat, Schk, S11, threshold):
    """Classical RK4 from the last mesh point down to the first.

    ``coef[k, s]`` holds the packed coefficients on step k (from t_{k+1} down
    to t_k) at stage s = 0 (t_{k+1}), 1 (midpoint), 2 (t_k). Returns the state
    on every mesh point and the index of the first mesh point whose state is
    non-finite or exceeds ``threshold`` in magnitude (-1 if none).
    """
    d0 = S00.shape[0]
    d = S11.shape[0]
    M = coef.shape[0]
    out = np.full((M + 1, len(yT)), np.nan)
    out[M] = yT
    y = np.array(yT, dtype=float)
    h = -dt
    args = (gamma, K0, K, m0, m, S00, Shat, Schk, S11)
    for k in range(M - 1, -1, -1):
        c0, c1, c2 = coef[k, 0], coef[k, 1], coef[k, 2]
        k1 = riccati_rhs(y, c0, *args)
        k2 = riccati_rhs(_symmetrize(y + 0.5 * h * k1, d0, d), c1, *args)
        k3 = riccati_rhs(_symmetrize(y + 0.5 * h * k2, d0, d), c1, *args)
        k4 = riccati_rhs(_symmetrize(y + h * k3, d0, d), c2, *args)
        y = _symmetrize(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), d0, d)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > threshold:
            return out, k
        out[k] = y
    return out, -1


def ou_euler(x_init, dW, K, m, Sigma, dt):
    """Euler-Maruyama for dx = -K (x - m) dt + Sigma dW over a batch.

    x_init: (P, q); dW: (P, M, q) -> paths (P, M + 1, q).
    """
    P, M, q = dW.shape
    out = np.empty((P, M + 1, q))
    out[:, 0] = x_init
    noise = dW @ Sigma.T
    x = np.array(x_init, dtype=float)
    for k in range(M):
        x = x - K * (x - m) * dt + noise[:, k]
        out[:, k + 1] = x
    return out


def habit_closed_loop(Y, F, X0, zeta, logterm, rho, gamma, beta, kappa, b, dt):
    """Habit/consumption recursion with the optimal consumption rule fed back.

    Y, F: (P, M + 1); X0: (P,); zeta, logterm, rho: (M + 1,).
    Returns habit and consumption, both (P, M + 1).
    """
    P, M1 = Y.shape
    X = np.empty((P, M1))
    c = np.empty((P, M1))
    x = np.array(X0, dtype=float)
    for k in range(M1):
        X[:, k] = x
        ck = x + (logterm[k] - gamma * (Y[:, k] - F[:, k] + zeta[k] * x)) / beta
        c[:, k] = ck
        if k < M1 - 1:
            x = x + (-kappa * (x - rho[k]) + b * (ck - rho[k])) * dt
    return X, c


def habit_open_loop(c, X0, rho, kappa, b, dt):
    """Habit path driven by a given consumption path. c: (P, M + 1)."""
    P, M1 = c.shape
    X = np.empty((P, M1))
    x = np.array(X0, dtype=float)
    for k in range(M1):
        X[:, k] = x
        if k < M1 - 1:
            x = x + (-kappa * (x - rho[k]) + b * (c[:, k] - rho[k])) * dt
    return X
