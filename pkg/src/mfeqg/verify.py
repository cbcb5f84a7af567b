"""Executable checks: driver identities, pathwise BSDE residuals, the
market-clearing rate, Monte Carlo optimality and the variance bound."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from mfeqg import kernels
from mfeqg.equilibrium import (
    BsdeSlice, MarketSpec, _mv, bsde_slice, conditional_z0par, optimal_p, p_to_pi,
    risk_premium, simulate_market,
)
from mfeqg.factors import (
    FactorParams, LiabilityCoeffs, integrate_habit, integrate_wealth, liability, mu1,
    simulate_factors, simulate_independent,
)
from mfeqg.model import ModelError, ModelParams, discount_rate, g_offset, g_tilde
from mfeqg.riccati import RiccatiSolution, split_sigma0


def _sq(x):
    return np.einsum("...i,...i->...", x, x)


# -- driver ------------------------------------------------------------------

def driver_f(params: ModelParams, factors: FactorParams, ric: RiccatiSolution, t, x0, xi,
             slice_: BsdeSlice, Fval):
    """Driver of the mean-field BSDE in its raw form."""
    E = conditional_z0par(ric, factors, t, x0)
    g = np.asarray(g_offset(params, t, Fval))
    return (
        params.gamma * np.einsum("...i,...i->...", slice_.Z0par, E)
        - 0.5 * params.gamma * _sq(E)
        + 0.5 * params.gamma * (_sq(slice_.Z0perp) + _sq(slice_.Zi))
        - np.asarray(discount_rate(params, t)) * slice_.Y
        + g
    )


def driver_f_completed_square(params: ModelParams, factors: FactorParams, ric: RiccatiSolution,
                              t, x0, xi, slice_: BsdeSlice, Fval):
    """Same driver after completing the square in Z0par."""
    E = conditional_z0par(ric, factors, t, x0)
    g = np.asarray(g_offset(params, t, Fval))
    return (
        -0.5 * params.gamma * _sq(E - slice_.Z0par)
        + 0.5 * params.gamma * (_sq(slice_.Z0) + _sq(slice_.Zi))
        - np.asarray(discount_rate(params, t)) * slice_.Y
        + g
    )


def driver_f_expansion(params: ModelParams, factors: FactorParams, ric: RiccatiSolution,
                       liab: LiabilityCoeffs, t, x0, xi):
    """Same driver written as a quadratic form in (x0, xi) with coefficients
    built from the Riccati and liability blocks."""
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    gam = params.gamma
    kt = np.asarray(discount_rate(params, t))
    A00, A11, A10, B0, B1, C = ric.value(t)
    AF00, AF11, AF10, BF0, BF1, CF = liab.at(t)
    hat, chk = split_sigma0(factors.Sigma0, factors.n)
    S00 = factors.Sigma0 @ factors.Sigma0.T
    S11 = factors.Sigma @ factors.Sigma.T
    Shat, Schk = hat @ hat.T, chk @ chk.T
    mu = mu1(factors, t)
    A10T = np.swapaxes(A10, -1, -2)
    k1 = kt[..., None]
    k2 = kt[..., None, None]

    Q00 = 0.5 * gam * (A00 @ S00 @ A00 + A10T @ S11 @ A10) - 0.5 * k2 * (A00 - AF00)
    Q11 = 0.5 * gam * (A10 @ Schk @ A10T + A11 @ S11 @ A11) - 0.5 * k2 * (A11 - AF11)
    Q10 = gam * (A10 @ S00 @ A00 + A11 @ S11 @ A10) - k2 * (A10 - AF10)
    L0 = gam * (_mv(A00 @ S00, B0) + _mv(A10T @ S11, B1)) - k1 * (B0 - BF0)
    M = A10 @ Shat @ A10T
    L1 = gam * (_mv(M, mu) + _mv(A10 @ S00, B0) + _mv(A11 @ S11, B1)) - k1 * (B1 - BF1)
    const = (
        -0.5 * gam * np.einsum("...i,...ij,...j->...", mu, M, mu)
        + 0.5 * gam * _sq(B0 @ factors.Sigma0)
        + 0.5 * gam * _sq(B1 @ factors.Sigma)
        - kt * (C - CF)
        + np.asarray(g_tilde(params, t))
    )
    return (
        np.einsum("...i,...ij,...j->...", x0, Q00, x0)
        + np.einsum("...i,...ij,...j->...", xi, Q11, xi)
        + np.einsum("...i,...ij,...j->...", xi, Q10, x0)
        + np.einsum("...i,...i->...", L0, x0)
        + np.einsum("...i,...i->...", L1, xi)
        + const
    )


# -- report plumbing ---------------------------------------------------------

class _Report:
    csv_columns: tuple = ()

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text + "\n")
        return None

    def csv_rows(self):
        raise NotImplementedError

    def to_csv(self, path=None, comment: str | None = None) -> str | None:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_columns)
        for row in self.csv_rows():
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return None


def fitted_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# -- BSDE residual -----------------------------------------------------------

@dataclass
class ResidualReport(_Report):
    meshSizes: list
    rmsResiduals: list
    fittedOrder: float
    terminalError: float
    paths: int
    seed: int

    csv_columns = ("dt", "rms")

    @property
    def monotone(self) -> bool:
        r = self.rmsResiduals
        return all(r[i + 1] < r[i] for i in range(len(r) - 1))

    def csv_rows(self):
        for dt, rms in zip(self.meshSizes, self.rmsResiduals):
            yield float(dt), float(rms)


def _dyadic_ratios(T: float, meshSizes, fine_steps: int):
    ratios = []
    for dt in meshSizes:
        steps = T / dt
        M = int(round(steps))
        if M < 1 or abs(steps - M) > 1e-9 * steps:
            raise ModelError(f"mesh size {dt} does not divide the horizon")
        r, rem = divmod(fine_steps, M)
        if rem or r & (r - 1):
            raise ModelError(f"mesh with {M} steps is not a dyadic sub-mesh of {fine_steps}")
        ratios.append(r)
    return ratios


def bsde_residual_study(params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs,
                        ric: RiccatiSolution, meshSizes, paths: int, seed: int) -> ResidualReport:
    """Pathwise one-step residuals of the BSDE along Euler factor paths.

    The Riccati solution fixes the finest mesh; every requested mesh must be
    a dyadic sub-mesh of it. Brownian increments are simulated once on the
    finest mesh and summed for the coarser ones, and the factors are re-run
    with the Euler scheme on each mesh.
    """
    meshSizes = sorted((float(m) for m in meshSizes), reverse=True)
    fine = len(ric.grid) - 1
    ratios = _dyadic_ratios(params.T, meshSizes, fine)
    bundle = simulate_independent(factors, ric.grid, paths, seed)
    rms = []
    terminal = 0.0
    for r in ratios:
        M = fine // r
        grid = ric.grid[::r]
        dt = params.T / M
        dW0 = bundle.dW0.reshape(paths, M, r, factors.d0).sum(axis=2)
        dWi = bundle.dWi.reshape(paths, M, r, factors.d).sum(axis=2)
        x0 = kernels.ou_euler(bundle.x0[:, 0], dW0, factors.K0, factors.m0, factors.Sigma0, dt)
        xi = kernels.ou_euler(bundle.xi[:, 0], dWi, factors.K, factors.m, factors.Sigma, dt)
        sl = bsde_slice(ric, factors, grid, x0, xi)
        F = liability(liab, grid, x0, xi)
        f = driver_f(params, factors, ric, grid, x0, xi, sl, F)
        res = (
            sl.Y[:, 1:] - sl.Y[:, :-1] + f[:, :-1] * dt
            - np.einsum("pki,pki->pk", sl.Z0[:, :-1], dW0)
            - np.einsum("pki,pki->pk", sl.Zi[:, :-1], dWi)
        )
        rms.append(float(np.sqrt(np.mean(res * res))))
        terminal = max(terminal, float(np.max(np.abs(sl.Y[:, -1] - F[:, -1]))))
    order = fitted_slope(meshSizes, rms) if len(meshSizes) > 1 else float("nan")
    return ResidualReport(meshSizes=meshSizes, rmsResiduals=rms, fittedOrder=order,
                          terminalError=terminal, paths=paths, seed=int(seed))


# -- market clearing ---------------------------------------------------------

@dataclass
class ClearingReport(_Report):
    Ns: list
    clearingValues: list
    standardErrors: list
    fittedSlope: float
    pathsPerN: int
    seed: int
    pStarMeanMaxZ: float = float("nan")

    csv_columns = ("N", "value", "stderr")

    def csv_rows(self):
        for N, v, s in zip(self.Ns, self.clearingValues, self.standardErrors):
            yield int(N), float(v), float(s)


def market_seed(seed, *key: int) -> np.random.SeedSequence:
    base = np.random.SeedSequence(int(seed))
    return np.random.SeedSequence(base.entropy, spawn_key=tuple(key))


def _market_clearing(params, factors, ric, market, grid, N, ss):
    bundle = simulate_factors(factors, grid, N, ss)
    x0 = np.broadcast_to(bundle.x0, (N,) + bundle.x0.shape[1:])
    sl = bsde_slice(ric, factors, grid, x0, bundle.xi)
    theta = risk_premium(ric, factors, params, grid, bundle.x0)
    p = optimal_p(sl, theta, params.gamma)
    pi_bar = p_to_pi(p, market).mean(axis=0)
    value = float(np.trapezoid(_sq(pi_bar), grid))
    return value, p


def _p_mean_z(p) -> float:
    N = p.shape[0]
    mean = p.mean(axis=0)
    se = p.std(axis=0, ddof=1) / np.sqrt(N)
    z = np.zeros_like(mean)
    pos = se > 0
    z[pos] = np.abs(mean[pos]) / se[pos]
    if np.any(~pos & (mean != 0)):
        return float("inf")
    return float(z.max())


def clearing_sweep(params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs,
                   ric: RiccatiSolution, market: MarketSpec, Ns, pathsPerN: int, seed: int,
                   threads: int = 1) -> ClearingReport:
    """Time-integrated squared mean stock holding across agents, per N.

    Market j of size N uses the seed sequence keyed by (index of N, j), so
    results do not depend on the thread count.
    """
    grid = ric.grid
    Ns = [int(N) for N in Ns]
    if pathsPerN < 2:
        raise ModelError("need at least two markets per N for a standard error")
    values, errors = [], []
    zmax = float("nan")
    for jN, N in enumerate(Ns):
        jobs = [market_seed(seed, jN, j) for j in range(pathsPerN)]

        def run(ss):
            return _market_clearing(params, factors, ric, market, grid, N, ss)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                out = list(pool.map(run, jobs))
        else:
            out = [run(ss) for ss in jobs]
        v = np.array([o[0] for o in out])
        values.append(float(v.mean()))
        errors.append(float(v.std(ddof=1) / np.sqrt(len(v))))
        if jN == len(Ns) - 1:
            zmax = _p_mean_z(out[0][1])
    slope = fitted_slope(Ns, values) if len(Ns) > 1 else float("nan")
    return ClearingReport(Ns=Ns, clearingValues=values, standardErrors=errors,
                          fittedSlope=slope, pathsPerN=pathsPerN, seed=int(seed),
                          pStarMeanMaxZ=zmax)


# -- utility -----------------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    """Deterministic change (p, c) -> (p + eps h_p, c + eps h_c) on the mesh."""

    eps: float
    hp: np.ndarray      # (M + 1, d0), zero beyond the first n coordinates
    hc: np.ndarray      # (M + 1,)

    def scaled(self, eps: float) -> "Perturbation":
        return Perturbation(eps, self.hp, self.hc)


def random_perturbation(rng: np.random.Generator, grid, n: int, d0: int, eps: float,
                        scale: float = 1.0) -> Perturbation:
    """Bounded perturbation: affine in time with Gaussian coefficients,
    exposure restricted to the first n coordinates."""
    s = (np.asarray(grid) / grid[-1])[:, None]
    hp = np.zeros((len(grid), d0))
    hp[:, :n] = scale * (rng.standard_normal(n) + rng.standard_normal(n) * s)
    hc = scale * (rng.standard_normal() + rng.standard_normal() * s[:, 0])
    return Perturbation(float(eps), hp, hc)


@dataclass
class UtilityEstimate:
    value: float
    stderr: float
    clipped: int
    samples: np.ndarray = field(repr=False)


@dataclass
class UtilityComparison:
    """Paired (common random numbers) difference base minus perturbed."""

    difference: float
    stderr: float
    base: UtilityEstimate
    perturbed: UtilityEstimate


class UtilityExperiment:
    """Monte Carlo utility of the candidate strategy and of perturbations of
    it, all evaluated on one fixed set of simulated paths."""

    def __init__(self, params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs,
                 ric: RiccatiSolution, market: MarketSpec, paths: int, seed: int,
                 clip: float = 50.0):
        self.params = params
        self.clip = float(clip)
        self.grid = ric.grid
        self.bundle = simulate_independent(factors, ric.grid, paths, seed)
        mp = simulate_market(params, factors, liab, ric, market, self.bundle)
        self.theta = mp.theta
        self.F = mp.F
        self.p = mp.agents.pStar
        self.c = mp.agents.consumption
        self._base = None

    def _clip(self, x, counter):
        over = np.abs(x) > self.clip
        counter[0] += int(np.count_nonzero(over))
        return np.clip(x, -self.clip, self.clip)

    def estimate(self, pert: Perturbation | None = None) -> UtilityEstimate:
        par = self.params
        grid = self.grid
        dt = grid[1] - grid[0]
        if pert is None:
            p, c = self.p, self.c
        else:
            p = self.p + pert.eps * pert.hp
            c = self.c + pert.eps * pert.hc
        X = integrate_habit(par, c, self.bundle.habit0, grid)
        W = integrate_wealth(self.bundle.wealth0, p, self.theta, c, self.bundle.dW0, grid)
        clipped = [0]
        net = W - self.F
        term = -np.exp(self._clip(-par.delta * grid[-1] - par.gamma * net[:, -1], clipped))
        run_exp = self._clip(
            -par.delta * grid[:-1] - par.gamma * net[:, :-1] - par.beta * (c[:, :-1] - X[:, :-1]),
            clipped,
        )
        running = -par.a * np.exp(run_exp).sum(axis=1) * dt
        samples = term + running
        return UtilityEstimate(
            value=float(samples.mean()),
            stderr=float(samples.std(ddof=1) / np.sqrt(len(samples))),
            clipped=clipped[0],
            samples=samples,
        )

    @property
    def base(self) -> UtilityEstimate:
        if self._base is None:
            self._base = self.estimate(None)
        return self._base

    def compare(self, pert: Perturbation) -> UtilityComparison:
        other = self.estimate(pert)
        diff = self.base.samples - other.samples
        return UtilityComparison(
            difference=float(diff.mean()),
            stderr=float(diff.std(ddof=1) / np.sqrt(len(diff))),
            base=self.base, perturbed=other,
        )


def utility_estimate(params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs,
                     ric: RiccatiSolution, market: MarketSpec,
                     strategyPerturbation: Perturbation | None, paths: int, seed: int,
                     clip: float = 50.0) -> UtilityEstimate:
    """Monte Carlo estimate of the agent's utility under the (perturbed)
    candidate strategy."""
    exp = UtilityExperiment(params, factors, liab, ric, market, paths, seed, clip)
    return exp.estimate(strategyPerturbation)


# -- variance bound ----------------------------------------------------------

@dataclass
class VarianceBoundReport(_Report):
    sigma0Sq: float
    sigmaSq: float
    varNorm: float
    varsigma: float
    holds: bool

    csv_columns = ("sigma0Sq", "sigmaSq", "varNorm", "varsigma", "holds")

    def csv_rows(self):
        yield self.sigma0Sq, self.sigmaSq, self.varNorm, self.varsigma, int(self.holds)

    def __bool__(self) -> bool:
        return self.holds


def variance_bound_check(factors: FactorParams, varsigma: float) -> VarianceBoundReport:
    """Strict check of the noise and initial-variance sizes against
    ``varsigma``. Matrix norms: Frobenius for the volatilities, spectral for
    the covariance."""
    if not varsigma > 0:
        raise ModelError("varsigma must be positive")
    s0 = float(np.linalg.norm(factors.Sigma0, "fro") ** 2)
    s1 = float(np.linalg.norm(factors.Sigma, "fro") ** 2)
    v = float(np.linalg.norm(factors.varx0i, 2))
    return VarianceBoundReport(sigma0Sq=s0, sigmaSq=s1, varNorm=v, varsigma=float(varsigma),
                               holds=bool(max(s0, s1, v) < varsigma))
