"""Scalar preferences, the habit Riccati function zeta, driver offsets and the
bounded-liability smallness calculator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class ModelError(ValueError):
    """Invalid model input (bad parameter, time outside the horizon, ...)."""


class GridFunction:
    """Piecewise-linear function of time given by samples, or a constant.

    ``values`` has shape ``(len(times),) + value_shape``. Evaluation at a time
    array of shape ``S`` returns shape ``S + value_shape``. Outside the sampled
    range the end values are held, but callers validate coverage up front.
    """

    def __init__(self, times, values):
        values = np.asarray(values, dtype=float)
        if times is None:
            self.times = None
            self.values = values
            self.value_shape = values.shape
            return
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) < 1:
            raise ModelError("grid times must be a non-empty 1-d array")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ModelError("grid times must be strictly increasing")
        if values.shape[0] != len(times):
            raise ModelError(
                f"grid has {len(times)} times but {values.shape[0]} samples"
            )
        self.times = times
        self.values = values
        self.value_shape = values.shape[1:]

    @classmethod
    def constant(cls, value) -> "GridFunction":
        return cls(None, value)

    @property
    def is_constant(self) -> bool:
        return self.times is None

    def covers(self, t0: float, t1: float, tol: float = 1e-12) -> bool:
        if self.times is None:
            return True
        return self.times[0] <= t0 + tol and self.times[-1] >= t1 - tol

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.times is None:
            return np.broadcast_to(self.values, t.shape + self.value_shape).copy()
        if len(self.times) == 1:
            return np.broadcast_to(self.values[0], t.shape + self.value_shape).copy()
        tt = np.clip(t, self.times[0], self.times[-1])
        k = np.searchsorted(self.times, tt, side="right") - 1
        k = np.clip(k, 0, len(self.times) - 2)
        t_lo = self.times[k]
        w = (tt - t_lo) / (self.times[k + 1] - t_lo)
        w = w.reshape(w.shape + (1,) * len(self.value_shape))
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]


@dataclass(frozen=True)
class ModelParams:
    """Preference and habit constants shared by all agents."""

    gamma: float
    beta: float
    a: float
    delta: float
    kappa: float
    b: float
    T: float
    rho: GridFunction = field(default_factory=lambda: GridFunction.constant(0.0))

    def __post_init__(self):
        for name in ("gamma", "beta", "a", "kappa", "b", "T"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)}")
        if self.delta < 0:
            raise ModelError(f"delta must be nonnegative, got {self.delta}")
        if not isinstance(self.rho, GridFunction):
            object.__setattr__(self, "rho", GridFunction.constant(float(self.rho)))
        if self.rho.value_shape != ():
            raise ModelError("rho must be scalar-valued")
        if not self.rho.covers(0.0, self.T):
            raise ModelError("rho grid must cover [0, T]")

    @property
    def zeta_constants(self) -> "ZetaConstants":
        return ZetaConstants.from_params(self)


@dataclass(frozen=True)
class ZetaConstants:
    A: float
    B: float
    deltaPlus: float
    deltaMinus: float

    @classmethod
    def from_params(cls, params: ModelParams) -> "ZetaConstants":
        A = 0.5 * (params.kappa - params.b + params.gamma / params.beta)
        B = params.gamma * params.b / params.beta
        root = np.sqrt(A * A + B)
        return cls(A=A, B=B, deltaPlus=-A + root, deltaMinus=-A - root)

    @property
    def spread(self) -> float:
        return self.deltaPlus - self.deltaMinus

    def upper_bound(self, T: float) -> float:
        """Upper bound for zeta on [0, T]."""
        with np.errstate(over="ignore"):
            first = np.exp(self.spread * T) / self.deltaPlus
        return float(min(first, 1.0 / abs(self.deltaMinus)))


def _check_time(params: ModelParams, t, tol: float = 1e-12):
    t = np.asarray(t, dtype=float)
    if np.any(t < -tol) or np.any(t > params.T + tol):
        raise ModelError(f"time outside [0, {params.T}]")
    return np.clip(t, 0.0, params.T)


def _zeta_tau(zc: ZetaConstants, tau):
    # zeta = E / (D + q E) with E = expm1(D tau), q = |delta^-|; the second
    # branch avoids inf/inf when E overflows.
    D = zc.spread
    q = -zc.deltaMinus
    with np.errstate(over="ignore"):
        E = np.expm1(D * tau)
    small = E <= 1.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z_small = E / (D + q * E)
        z_large = 1.0 / (D / E + q)
    return np.where(small, z_small, z_large), E


def zeta(params: ModelParams, t: ArrayLike) -> ArrayLike:
    """Closed-form habit coefficient zeta_t, vectorized over ``t``."""
    t = _check_time(params, t)
    z, _ = _zeta_tau(params.zeta_constants, params.T - t)
    return z if z.ndim else float(z)


def zeta_dot(params: ModelParams, t: ArrayLike) -> ArrayLike:
    """Analytic time derivative of :func:`zeta`."""
    t = _check_time(params, t)
    zc = params.zeta_constants
    D = zc.spread
    q = -zc.deltaMinus
    with np.errstate(over="ignore"):
        E = np.expm1(D * (params.T - t))
    # d zeta / d tau = D^2 (1 + E) / (D + q E)^2, rewritten to survive overflow
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        big = E > 1.0
        r_small = D * D * (1.0 + E) / (D + q * E) ** 2
        inv = 1.0 / E
        r_large = D * D * (inv + inv * inv) / (D * inv + q) ** 2
    out = -np.where(big, r_large, r_small)
    return out if out.ndim else float(out)


def zeta_ode_residual(params: ModelParams, t: ArrayLike) -> ArrayLike:
    """zeta_dot minus the Riccati right-hand side; zero up to rounding."""
    z = np.asarray(zeta(params, t))
    zd = np.asarray(zeta_dot(params, t))
    rhs = (
        (params.kappa - params.b + params.gamma / params.beta) * z
        + (params.gamma * params.b / params.beta) * z * z
        - 1.0
    )
    out = zd - rhs
    return out if out.ndim else float(out)


def discount_rate(params: ModelParams, t: ArrayLike) -> ArrayLike:
    """gamma (1 + b zeta_t) / beta, the linear coefficient on Y in the driver."""
    z = np.asarray(zeta(params, t))
    out = params.gamma * (1.0 + params.b * z) / params.beta
    return out if out.ndim else float(out)


def g_tilde(params: ModelParams, t: ArrayLike) -> ArrayLike:
    t = _check_time(params, t)
    z = np.asarray(zeta(params, t))
    one_bz = 1.0 + params.b * z
    out = (
        -params.delta / params.gamma
        + (params.kappa - params.b) * z * params.rho(t)
        + one_bz / params.beta
        * (1.0 + np.log(params.a * params.beta / (params.gamma * one_bz)))
    )
    return out if out.ndim else float(out)


def g_offset(params: ModelParams, t: ArrayLike, F_t: ArrayLike) -> ArrayLike:
    """Driver offset g_t; affine in the liability value ``F_t``."""
    out = np.asarray(g_tilde(params, t)) + np.asarray(discount_rate(params, t)) * F_t
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SmallnessReport:
    cGamma: float
    CGamma: float
    lhs: float
    bound: float
    R: float
    contractionFactor: float
    holds: bool

    def to_dict(self) -> dict:
        return {
            "cGamma": self.cGamma,
            "CGamma": self.CGamma,
            "lhs": self.lhs,
            "bound": self.bound,
            "R": self.R,
            "contractionFactor": self.contractionFactor,
            "holds": self.holds,
        }


def smallness_check(
    gammaBounds: tuple[float, float],
    gammaHatInvMean: float,
    FTbound: float,
    gIntegralBound: float,
) -> SmallnessReport:
    """Evaluate the bounded-liability smallness condition for heterogeneous
    risk aversion.

    ``gammaHatInvMean`` is E[1/gamma], so the aggregate risk aversion is its
    reciprocal. ``FTbound`` and ``gIntegralBound`` are sup-norm bounds on the
    terminal liability and on the time integral of |g|.
    """
    g_lo, g_hi = map(float, gammaBounds)
    if not g_lo > 0:
        raise ModelError("lower risk-aversion bound must be positive")
    if g_hi < g_lo:
        raise ModelError("risk-aversion bounds are reversed")
    if not gammaHatInvMean > 0:
        raise ModelError("mean of 1/gamma must be positive")
    g_hat = 1.0 / gammaHatInvMean
    if g_hat < g_lo * (1 - 1e-12) or g_hat > g_hi * (1 + 1e-12):
        raise ModelError("aggregate risk aversion lies outside the bounds")
    if FTbound < 0 or gIntegralBound < 0:
        raise ModelError("norm bounds must be nonnegative")

    c_gamma = max(g_hi / 2.0, g_hat**2 / g_lo)
    C_gamma = g_hat + max(g_hat**2 / (2.0 * g_lo), g_hi / 2.0)
    lhs = float(np.sqrt(FTbound**2 + 4.0 * gIntegralBound**2))
    bound = min(1.0 / (16.0 * c_gamma), 1.0 / (32.0 * C_gamma))
    R = 2.0 * lhs
    return SmallnessReport(
        cGamma=c_gamma,
        CGamma=C_gamma,
        lhs=lhs,
        bound=bound,
        R=R,
        contractionFactor=256.0 * C_gamma**2 * R**2,
        holds=bool(lhs < bound),
    )
