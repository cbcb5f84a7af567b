"""Gaussian factor processes, quadratic liabilities and pathwise habit/wealth
integration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mfeqg import kernels
from mfeqg.model import GridFunction, ModelError, ModelParams


def _as_grid_function(value, shape) -> GridFunction:
    if isinstance(value, GridFunction):
        fn = value
    else:
        fn = GridFunction.constant(np.asarray(value, dtype=float))
    if fn.value_shape != tuple(shape):
        raise ModelError(f"expected coefficient shape {tuple(shape)}, got {fn.value_shape}")
    return fn


@dataclass(frozen=True)
class FactorParams:
    """Dimensions, OU dynamics and initial laws of the factor processes."""

    n: int
    d0: int
    d: int
    K0: float
    K: float
    m0: np.ndarray
    m: np.ndarray
    Sigma0: np.ndarray
    Sigma: np.ndarray
    x0_0: np.ndarray
    meanXi0: float = 0.0
    varXi0: float = 0.0
    meanX0habit: float = 0.0
    varX0habit: float = 0.0
    meanx0i: np.ndarray | None = None
    varx0i: np.ndarray | None = None

    def __post_init__(self):
        d0, d = int(self.d0), int(self.d)
        if not (0 < self.n <= d0):
            raise ModelError(f"need 0 < n <= d0, got n={self.n}, d0={d0}")
        if d < 1:
            raise ModelError("d must be at least 1")
        if not (self.K0 > 0 and self.K > 0):
            raise ModelError("mean-reversion speeds K0, K must be positive")
        shapes = {
            "m0": (d0,), "m": (d,), "Sigma0": (d0, d0), "Sigma": (d, d), "x0_0": (d0,),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            object.__setattr__(self, name, arr)
        mean = np.zeros(d) if self.meanx0i is None else self.meanx0i
        var = np.zeros((d, d)) if self.varx0i is None else self.varx0i
        object.__setattr__(self, "meanx0i", np.array(mean, dtype=float).reshape(d))
        var = np.array(var, dtype=float).reshape(d, d)
        if np.max(np.abs(var - var.T), initial=0.0) > 1e-12:
            raise ModelError("varx0i must be symmetric")
        if np.linalg.eigvalsh(var).min() < -1e-12 * max(1.0, np.abs(var).max()):
            raise ModelError("varx0i must be positive semidefinite")
        object.__setattr__(self, "varx0i", var)
        if self.varXi0 < 0 or self.varX0habit < 0:
            raise ModelError("variances must be nonnegative")


class LiabilityCoeffs:
    """Coefficients of the quadratic liability F_t(x0, xi).

    Each argument is a constant array or a :class:`GridFunction`.
    """

    names = ("AF00", "AF11", "AF10", "BF0", "BF1", "CF")

    def __init__(self, d0: int, d: int, AF00=None, AF11=None, AF10=None,
                 BF0=None, BF1=None, CF=None):
        self.d0, self.d = d0, d
        shapes = {
            "AF00": (d0, d0), "AF11": (d, d), "AF10": (d, d0),
            "BF0": (d0,), "BF1": (d,), "CF": (),
        }
        given = dict(AF00=AF00, AF11=AF11, AF10=AF10, BF0=BF0, BF1=BF1, CF=CF)
        for name, shape in shapes.items():
            value = given[name]
            if value is None:
                value = np.zeros(shape)
            setattr(self, name, _as_grid_function(value, shape))
        for name in ("AF00", "AF11"):
            vals = getattr(self, name).values
            if np.max(np.abs(vals - np.swapaxes(vals, -1, -2)), initial=0.0) > 1e-12:
                raise ModelError(f"{name} must be symmetric at every grid point")

    @classmethod
    def zeros(cls, d0: int, d: int) -> "LiabilityCoeffs":
        return cls(d0, d)

    def covers(self, T: float) -> bool:
        return all(getattr(self, n).covers(0.0, T) for n in self.names)

    def at(self, t):
        """Coefficient values at time(s) ``t`` as a tuple in canonical order."""
        return tuple(getattr(self, n)(t) for n in self.names)

    def scaled(self, factor: float) -> "LiabilityCoeffs":
        out = LiabilityCoeffs.__new__(LiabilityCoeffs)
        out.d0, out.d = self.d0, self.d
        for n in self.names:
            fn = getattr(self, n)
            setattr(out, n, GridFunction(fn.times, factor * fn.values))
        return out


def mu1(factors: FactorParams, t):
    """Mean of the idiosyncratic factor at time ``t`` (closed form)."""
    t = np.asarray(t, dtype=float)
    decay = np.exp(-factors.K * t)[..., None]
    return factors.meanx0i * decay + factors.m * (1.0 - decay)


def quadratic_form(coeffs, x0, xi):
    """Evaluate 1/2 x0'A00 x0 + 1/2 xi'A11 xi + xi'A10 x0 + B0'x0 + B1'xi + C.

    ``coeffs`` is (A00, A11, A10, B0, B1, C) with optional leading time axes
    that broadcast against the leading axes of ``x0`` and ``xi``.
    """
    A00, A11, A10, B0, B1, C = coeffs
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return (
        0.5 * np.einsum("...i,...ij,...j->...", x0, A00, x0)
        + 0.5 * np.einsum("...i,...ij,...j->...", xi, A11, xi)
        + np.einsum("...i,...ij,...j->...", xi, A10, x0)
        + np.einsum("...i,...i->...", B0, x0)
        + np.einsum("...i,...i->...", B1, xi)
        + C
    )


def liability(liab: LiabilityCoeffs, t, x0, xi):
    """Liability F_t for factor values ``x0`` (..., d0) and ``xi`` (..., d)."""
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x0.shape[-1] != liab.d0 or xi.shape[-1] != liab.d:
        raise ModelError("factor dimensions do not match the liability coefficients")
    out = quadratic_form(liab.at(t), x0, xi)
    return out if np.ndim(out) else float(out)


def uniform_grid(T: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ModelError("need at least one time step")
    return np.linspace(0.0, T, steps + 1)


def grid_step(grid) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ModelError("time mesh needs at least two points")
    steps = np.diff(grid)
    dt = (grid[-1] - grid[0]) / (len(grid) - 1)
    if not dt > 0:
        raise ModelError("time step must be positive")
    if np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, abs(grid[-1])):
        raise ModelError("time mesh must be uniform")
    return dt


def psd_sqrt(cov) -> np.ndarray:
    """Square root L with L L' = cov, clipping tiny negative eigenvalues."""
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def stream(seed, *key: int) -> np.random.Generator:
    """Independent generator for stream ``key`` under ``seed``."""
    ss = _seed_sequence(seed)
    child = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(key))
    return np.random.Generator(np.random.PCG64(child))


@dataclass
class PathBundle:
    """Brownian increments and factor paths for one market of N agents.

    ``x0`` and ``dW0`` carry a leading axis of length 1 (one common market)
    or N (independent markets, one agent each), so they broadcast against the
    per-agent arrays.
    """

    grid: np.ndarray
    dW0: np.ndarray          # (P0, M, d0)
    dWi: np.ndarray          # (N, M, d)
    x0: np.ndarray           # (P0, M + 1, d0)
    xi: np.ndarray           # (N, M + 1, d)
    seed: object
    N: int
    wealth0: np.ndarray = field(default=None)   # (N,)
    habit0: np.ndarray = field(default=None)    # (N,)

    @property
    def dt(self) -> float:
        return grid_step(self.grid)


def _draw_agent(rng, factors: FactorParams, chol):
    wealth0 = factors.meanXi0 + np.sqrt(factors.varXi0) * rng.standard_normal()
    habit0 = factors.meanX0habit + np.sqrt(factors.varX0habit) * rng.standard_normal()
    x_init = factors.meanx0i + chol @ rng.standard_normal(factors.d)
    return wealth0, habit0, x_init


def simulate_factors(factors: FactorParams, grid, N: int, seed) -> PathBundle:
    """Simulate one market: a common factor path and N idiosyncratic ones.

    Stream 0 drives the common noise; stream i + 1 drives agent i (initial
    wealth, initial habit, initial factor value, then its increments).
    """
    if N < 1:
        raise ModelError("need at least one agent")
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    M = len(grid) - 1
    sq = np.sqrt(dt)
    chol = psd_sqrt(factors.varx0i)

    dW0 = stream(seed, 0).standard_normal((1, M, factors.d0)) * sq
    dWi = np.empty((N, M, factors.d))
    wealth0 = np.empty(N)
    habit0 = np.empty(N)
    x_init = np.empty((N, factors.d))
    for i in range(N):
        rng = stream(seed, i + 1)
        wealth0[i], habit0[i], x_init[i] = _draw_agent(rng, factors, chol)
        dWi[i] = rng.standard_normal((M, factors.d)) * sq

    x0 = kernels.ou_euler(factors.x0_0[None, :], dW0, factors.K0, factors.m0, factors.Sigma0, dt)
    xi = kernels.ou_euler(x_init, dWi, factors.K, factors.m, factors.Sigma, dt)
    return PathBundle(grid=grid, dW0=dW0, dWi=dWi, x0=x0, xi=xi, seed=seed, N=N,
                      wealth0=wealth0, habit0=habit0)


def simulate_independent(factors: FactorParams, grid, paths: int, seed,
                         block: int = 4096) -> PathBundle:
    """Simulate ``paths`` independent single-agent markets.

    Draws are organised in blocks of ``block`` paths with one stream per
    block, so the result does not depend on how blocks are scheduled.
    """
    if paths < 1:
        raise ModelError("need at least one path")
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    M = len(grid) - 1
    sq = np.sqrt(dt)
    chol = psd_sqrt(factors.varx0i)
    d0, d = factors.d0, factors.d

    dW0 = np.empty((paths, M, d0))
    dWi = np.empty((paths, M, d))
    wealth0 = np.empty(paths)
    habit0 = np.empty(paths)
    x_init = np.empty((paths, d))
    for j, start in enumerate(range(0, paths, block)):
        stop = min(start + block, paths)
        size = stop - start
        rng = stream(seed, j)
        wealth0[start:stop] = factors.meanXi0 + np.sqrt(factors.varXi0) * rng.standard_normal(size)
        habit0[start:stop] = factors.meanX0habit + np.sqrt(factors.varX0habit) * rng.standard_normal(size)
        x_init[start:stop] = factors.meanx0i + rng.standard_normal((size, d)) @ chol.T
        dW0[start:stop] = rng.standard_normal((size, M, d0)) * sq
        dWi[start:stop] = rng.standard_normal((size, M, d)) * sq

    x0 = kernels.ou_euler(np.broadcast_to(factors.x0_0, (paths, d0)), dW0,
                          factors.K0, factors.m0, factors.Sigma0, dt)
    xi = kernels.ou_euler(x_init, dWi, factors.K, factors.m, factors.Sigma, dt)
    return PathBundle(grid=grid, dW0=dW0, dWi=dWi, x0=x0, xi=xi, seed=seed, N=paths,
                      wealth0=wealth0, habit0=habit0)


@dataclass
class AgentState:
    """Per-agent trajectories under the candidate optimal strategy."""

    xi0: np.ndarray
    X0: np.ndarray
    habit: np.ndarray        # (N, M + 1)
    consumption: np.ndarray  # (N, M + 1)
    wealth: np.ndarray       # (N, M + 1)
    pStar: np.ndarray        # (N, M + 1, d0)
    piStar: np.ndarray       # (N, M + 1, n)


def consumption_logterm(params: ModelParams, zeta_values):
    return np.log(params.a * params.beta / (params.gamma * (1.0 + params.b * np.asarray(zeta_values))))


def integrate_habit_and_consumption(params: ModelParams, zetaFn: Callable, Y, F, X0, grid):
    """Habit and optimal consumption along paths.

    At each step the optimal consumption is evaluated from the current habit,
    Y, F and zeta, and then fed into the Euler step of the habit ODE. ``Y`` and
    ``F`` have shape (..., M + 1); ``X0`` has the leading shape.
    """
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    Y = np.asarray(Y, dtype=float)
    F = np.asarray(F, dtype=float)
    lead = Y.shape[:-1]
    z = np.asarray(zetaFn(grid), dtype=float)
    X, c = kernels.habit_closed_loop(
        Y.reshape(-1, len(grid)),
        np.broadcast_to(F, Y.shape).reshape(-1, len(grid)),
        np.broadcast_to(np.asarray(X0, dtype=float), lead).reshape(-1),
        z, consumption_logterm(params, z), params.rho(grid),
        params.gamma, params.beta, params.kappa, params.b, dt,
    )
    return X.reshape(Y.shape), c.reshape(Y.shape)


def integrate_habit(params: ModelParams, c, X0, grid):
    """Habit path driven by a given consumption path ``c`` (..., M + 1)."""
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    c = np.asarray(c, dtype=float)
    lead = c.shape[:-1]
    X = kernels.habit_open_loop(
        c.reshape(-1, len(grid)),
        np.broadcast_to(np.asarray(X0, dtype=float), lead).reshape(-1),
        params.rho(grid), params.kappa, params.b, dt,
    )
    return X.reshape(c.shape)


def integrate_wealth(xi0, p, theta, c, dW0, grid):
    """Euler scheme for the self-financing wealth with consumption.

    ``p`` and ``theta`` are (..., M or M + 1, d0), ``c`` is (..., M or M + 1)
    and ``dW0`` is (..., M, d0); only the first M time points of the strategy
    enter. Returns (..., M + 1).
    """
    grid = np.asarray(grid, dtype=float)
    dt = grid_step(grid)
    M = len(grid) - 1
    p = np.asarray(p, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    dW0 = np.asarray(dW0, dtype=float)
    if p.shape[-2] not in (M, M + 1) or theta.shape[-2] not in (M, M + 1) \
            or c.shape[-1] not in (M, M + 1) or dW0.shape[-2] != M:
        raise ModelError("strategy, premium and increments must be aligned with the mesh")
    p, theta, c = p[..., :M, :], theta[..., :M, :], c[..., :M]
    inc = (np.einsum("...i,...i->...", p, theta) - c) * dt + np.einsum("...i,...i->...", p, dW0)
    start = np.broadcast_to(np.asarray(xi0, dtype=float)[..., None], inc.shape[:-1] + (1,))
    return np.cumsum(np.concatenate([start, inc], axis=-1), axis=-1)
