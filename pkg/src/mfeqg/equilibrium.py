"""Semi-analytic BSDE solution, equilibrium risk premium and optimal
strategies built from a Riccati solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from mfeqg.factors import (
    AgentState, FactorParams, LiabilityCoeffs, PathBundle, integrate_habit_and_consumption,
    integrate_wealth, liability, mu1, quadratic_form,
)
from mfeqg.model import ModelError, ModelParams, zeta
from mfeqg.riccati import RiccatiBlowUp, RiccatiSolution, split_sigma0


@dataclass(frozen=True)
class BsdeSlice:
    """Y and the Z rows at given (t, x0, xi); arrays carry any leading
    batch axes of the inputs."""

    Y: np.ndarray
    Z0: np.ndarray
    Zi: np.ndarray
    Z0par: np.ndarray
    Z0perp: np.ndarray


@dataclass(frozen=True)
class MarketSpec:
    """Constant stock volatility sigma (n x d0) with spectral bounds on
    sigma sigma'."""

    sigma: np.ndarray
    lambdaLow: float
    lambdaHigh: float

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "sigma", sigma)
        n, d0 = sigma.shape
        if n > d0:
            raise ModelError("sigma needs at most as many rows as columns")
        if not 0 < self.lambdaLow <= self.lambdaHigh:
            raise ModelError("need 0 < lambdaLow <= lambdaHigh")
        eig = np.linalg.eigvalsh(sigma @ sigma.T)
        if eig.min() < self.lambdaLow or eig.max() > self.lambdaHigh:
            raise ModelError(
                f"eigenvalues of sigma sigma' lie in [{eig.min():.6g}, {eig.max():.6g}], "
                f"outside [{self.lambdaLow}, {self.lambdaHigh}]"
            )
        if not np.isfinite(self.hat_condition) or self.hat_condition > 1e12:
            raise ModelError("the leading n x n block of sigma is not invertible")

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def d0(self) -> int:
        return self.sigma.shape[1]

    @property
    def hat_condition(self) -> float:
        return float(np.linalg.cond(self.sigma[:, :self.n]))

    @property
    def gram_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.sigma @ self.sigma.T)


def _require_global(ric: RiccatiSolution):
    if ric.blowup_time is not None:
        raise RiccatiBlowUp(ric.blowup_time, "Riccati solution is not global "
                            f"(blow-up at t = {ric.blowup_time:.17g})")


def _check_factor_dims(ric: RiccatiSolution, factors: FactorParams, x0=None, xi=None):
    if (ric.d0, ric.d) != (factors.d0, factors.d):
        raise ModelError("Riccati solution and factor dimensions differ")
    if x0 is not None and np.shape(x0)[-1] != factors.d0:
        raise ModelError(f"x0 must end in dimension {factors.d0}")
    if xi is not None and np.shape(xi)[-1] != factors.d:
        raise ModelError(f"xi must end in dimension {factors.d}")


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


def _mtv(A, x):
    return np.einsum("...ji,...j->...i", A, x)


def bsde_slice(ric: RiccatiSolution, factors: FactorParams, t, x0, xi) -> BsdeSlice:
    """Quadratic-form solution and its Z rows.

    ``t`` may be a scalar or an array of times whose shape matches the
    trailing batch axes of ``x0`` (..., d0) and ``xi`` (..., d).
    """
    _require_global(ric)
    _check_factor_dims(ric, factors, x0, xi)
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    coeffs = ric.value(t)
    A00, A11, A10, B0, B1, _ = coeffs
    Y = quadratic_form(coeffs, x0, xi)
    v0 = _mv(A00, x0) + _mtv(A10, xi) + B0
    v1 = _mv(A10, x0) + _mv(A11, xi) + B1
    Z0 = v0 @ factors.Sigma0
    Zi = v1 @ factors.Sigma
    Z0par = np.zeros_like(Z0)
    Z0par[..., :factors.n] = Z0[..., :factors.n]
    return BsdeSlice(Y=Y, Z0=Z0, Zi=Zi, Z0par=Z0par, Z0perp=Z0 - Z0par)


def conditional_z0par(ric: RiccatiSolution, factors: FactorParams, t, x0):
    """Mean of Z0par given the common noise (mu1 in place of xi)."""
    _require_global(ric)
    _check_factor_dims(ric, factors, x0)
    x0 = np.asarray(x0, dtype=float)
    A00, _, A10, B0, _, _ = ric.value(t)
    hat, _ = split_sigma0(factors.Sigma0, factors.n)
    return (_mv(A00, x0) + _mtv(A10, mu1(factors, t)) + B0) @ hat


def risk_premium(ric: RiccatiSolution, factors: FactorParams, params: ModelParams, t, x0):
    """Equilibrium market price of risk; depends on the common factor only."""
    return -params.gamma * conditional_z0par(ric, factors, t, x0)


def optimal_p(slice_: BsdeSlice, theta, gamma: float):
    """Optimal exposure row p* = Z0par + theta / gamma."""
    return slice_.Z0par + np.asarray(theta, dtype=float) / gamma


def p_to_pi(p, market: MarketSpec):
    """Stock holdings pi solving pi' sigma = p in the least-squares sense,
    i.e. pi = (sigma sigma')^{-1} sigma p'. Vectorized over leading axes."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != market.d0:
        raise ModelError(f"p must end in dimension {market.d0}")
    rhs = p @ market.sigma.T
    factor = cho_factor(market.sigma @ market.sigma.T)
    flat = rhs.reshape(-1, market.n).T
    return cho_solve(factor, flat).T.reshape(rhs.shape)


@dataclass
class MarketPaths:
    """Equilibrium quantities along simulated paths."""

    theta: np.ndarray        # (P0, M + 1, d0)
    Y: np.ndarray            # (N, M + 1)
    F: np.ndarray            # (N, M + 1)
    agents: AgentState


def simulate_market(params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs,
                    ric: RiccatiSolution, market: MarketSpec, bundle: PathBundle) -> MarketPaths:
    """Evaluate Y, theta, p*, pi*, consumption, habit and wealth along the
    factor paths of ``bundle``."""
    _require_global(ric)
    if market.n != factors.n or market.d0 != factors.d0:
        raise ModelError("market and factor dimensions differ")
    grid = bundle.grid
    if len(grid) != len(ric.grid) or not np.allclose(grid, ric.grid, rtol=0, atol=1e-12):
        raise ModelError("path mesh must equal the Riccati mesh")
    t = ric.grid
    x0 = np.broadcast_to(bundle.x0, bundle.xi.shape[:2] + (factors.d0,))
    sl = bsde_slice(ric, factors, t, x0, bundle.xi)
    theta = risk_premium(ric, factors, params, t, bundle.x0)
    p = optimal_p(sl, theta, params.gamma)
    F = liability(liab, t, x0, bundle.xi)
    X, c = integrate_habit_and_consumption(
        params, lambda s: zeta(params, s), sl.Y, F, bundle.habit0, grid
    )
    W = integrate_wealth(bundle.wealth0, p, theta, c, bundle.dW0, grid)
    agents = AgentState(xi0=bundle.wealth0, X0=bundle.habit0, habit=X, consumption=c,
                        wealth=W, pStar=p, piStar=p_to_pi(p, market))
    return MarketPaths(theta=theta, Y=sl.Y, F=F, agents=agents)
