"""Backward Riccati/linear ODE system for the quadratic-Gaussian coefficients
of the mean-field BSDE solution."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from mfeqg import kernels
from mfeqg.factors import FactorParams, LiabilityCoeffs, mu1
from mfeqg.model import ModelError, ModelParams, discount_rate, g_tilde

DEFAULT_BLOWUP_THRESHOLD = 1e8


class RiccatiBlowUp(ArithmeticError):
    """The backward integration left the finite/thresholded region."""

    def __init__(self, t: float, message: str | None = None):
        self.t = t
        super().__init__(message or f"Riccati solution blew up at t = {t:.17g}")


def split_sigma0(Sigma0, n: int):
    """Split Sigma0 column-wise into the traded part (first n columns) and
    the rest."""
    Sigma0 = np.asarray(Sigma0, dtype=float)
    d0 = Sigma0.shape[1]
    if not (0 < n <= d0):
        raise ModelError(f"n must lie in 1..{d0}, got {n}")
    hat = np.zeros_like(Sigma0)
    hat[:, :n] = Sigma0[:, :n]
    return hat, Sigma0 - hat


class RiccatiState(NamedTuple):
    A00: np.ndarray
    A11: np.ndarray
    A10: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    C: float

    def pack(self) -> np.ndarray:
        return np.concatenate([
            np.ravel(self.A00), np.ravel(self.A11), np.ravel(self.A10),
            np.ravel(self.B0), np.ravel(self.B1), [float(self.C)],
        ])

    @classmethod
    def unpack(cls, y, d0: int, d: int) -> "RiccatiState":
        y = np.asarray(y, dtype=float)
        i = 0
        A00 = y[..., i:i + d0 * d0].reshape(y.shape[:-1] + (d0, d0)); i += d0 * d0
        A11 = y[..., i:i + d * d].reshape(y.shape[:-1] + (d, d)); i += d * d
        A10 = y[..., i:i + d * d0].reshape(y.shape[:-1] + (d, d0)); i += d * d0
        B0 = y[..., i:i + d0]; i += d0
        B1 = y[..., i:i + d]; i += d
        return cls(A00, A11, A10, B0, B1, y[..., i])

    @classmethod
    def zeros(cls, d0: int, d: int) -> "RiccatiState":
        return cls(np.zeros((d0, d0)), np.zeros((d, d)), np.zeros((d, d0)),
                   np.zeros(d0), np.zeros(d), 0.0)


def _constants(params: ModelParams, factors: FactorParams):
    hat, check = split_sigma0(factors.Sigma0, factors.n)
    S00 = factors.Sigma0 @ factors.Sigma0.T
    return dict(
        gamma=params.gamma, K0=factors.K0, K=factors.K,
        m0=factors.m0, m=factors.m,
        S00=S00, Shat=hat @ hat.T, Schk=check @ check.T,
        S11=factors.Sigma @ factors.Sigma.T,
    )


def pack_coefficients(params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs, t):
    """Time-dependent ODE coefficients at times ``t``, packed per row."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    AF00, AF11, AF10, BF0, BF1, CF = liab.at(t)
    n = len(t)
    return np.concatenate([
        np.asarray(discount_rate(params, t)).reshape(n, 1),
        np.asarray(g_tilde(params, t)).reshape(n, 1),
        AF00.reshape(n, -1), AF11.reshape(n, -1), AF10.reshape(n, -1),
        BF0.reshape(n, -1), BF1.reshape(n, -1), CF.reshape(n, 1),
        mu1(factors, t).reshape(n, -1),
    ], axis=1)


def _check_dims(factors: FactorParams, liab: LiabilityCoeffs):
    if (liab.d0, liab.d) != (factors.d0, factors.d):
        raise ModelError(
            f"liability dimensions ({liab.d0}, {liab.d}) do not match factors "
            f"({factors.d0}, {factors.d})"
        )


def rhs(t: float, state: RiccatiState, params: ModelParams, factors: FactorParams,
        liab: LiabilityCoeffs, backend: str | None = None) -> RiccatiState:
    """Time derivative of (A00, A11, A10, B0, B1, C) at time ``t``."""
    _check_dims(factors, liab)
    d0, d = factors.d0, factors.d
    shapes = [(d0, d0), (d, d), (d, d0), (d0,), (d,)]
    for arr, shape in zip(state[:5], shapes):
        if np.shape(arr) != shape:
            raise ModelError(f"state block has shape {np.shape(arr)}, expected {shape}")
    coef = pack_coefficients(params, factors, liab, t)[0]
    out = kernels.get_backend(backend).riccati_rhs(
        state.pack(), coef, **_constants(params, factors)
    )
    s = RiccatiState.unpack(out, d0, d)
    return s._replace(C=float(s.C))


@dataclass
class RiccatiSolution:
    """Backward-ODE solution on a uniform mesh.

    Block arrays carry the mesh as their leading axis. ``blowup_time`` is set
    (and later entries are NaN) when the integration was stopped.
    """

    grid: np.ndarray
    A00: np.ndarray
    A11: np.ndarray
    A10: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    C: np.ndarray
    blowup_time: float | None = None
    terminal: RiccatiState | None = None

    @property
    def d0(self) -> int:
        return self.A00.shape[-1]

    @property
    def d(self) -> int:
        return self.A11.shape[-1]

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def blocks(self):
        return (self.A00, self.A11, self.A10, self.B0, self.B1, self.C)

    def at_index(self, k) -> RiccatiState:
        return RiccatiState(*(b[k] for b in self.blocks))

    def value(self, t) -> RiccatiState:
        """Linearly interpolated coefficients at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.grid[0] - 1e-12) or np.any(t > self.grid[-1] + 1e-12):
            raise ModelError("time outside the solution mesh")
        tt = np.clip(t, self.grid[0], self.grid[-1])
        k = np.clip(np.searchsorted(self.grid, tt, side="right") - 1, 0, len(self.grid) - 2)
        w = (tt - self.grid[k]) / (self.grid[k + 1] - self.grid[k])
        exact = w == 0.0
        out = []
        for b in self.blocks:
            ww = w.reshape(w.shape + (1,) * (b.ndim - 1))
            ex = exact.reshape(ww.shape)
            out.append(np.where(ex, b[k], (1.0 - ww) * b[k] + ww * b[k + 1]))
        return RiccatiState(*out)

    def to_csv(self, path_or_buf=None, comment: str | None = None) -> str | None:
        """Write one row per mesh point: t, then every block flattened
        row-major. Returns the text when no destination is given."""
        header = ["t"] + csv_columns(self.d0, self.d)
        flat = np.concatenate([self.grid[:, None]] + [
            b.reshape(len(self.grid), -1) for b in self.blocks
        ], axis=1)
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in flat:
            w.writerow([format(v, ".17g") for v in row])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_buf) -> "RiccatiSolution":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf) as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        d0 = sum(1 for h in header if h.startswith("B0["))
        d = sum(1 for h in header if h.startswith("B1["))
        if header != ["t"] + csv_columns(d0, d):
            raise ModelError("unrecognised Riccati CSV header")
        grid = body[:, 0]
        s = RiccatiState.unpack(body[:, 1:], d0, d)
        return cls(grid, *s)


def csv_columns(d0: int, d: int) -> list[str]:
    cols = [f"A00[{i}][{j}]" for i in range(d0) for j in range(d0)]
    cols += [f"A11[{i}][{j}]" for i in range(d) for j in range(d)]
    cols += [f"A10[{i}][{j}]" for i in range(d) for j in range(d0)]
    cols += [f"B0[{i}]" for i in range(d0)]
    cols += [f"B1[{i}]" for i in range(d)]
    cols += ["C"]
    return cols


def terminal_state(liab: LiabilityCoeffs, T: float) -> RiccatiState:
    AF00, AF11, AF10, BF0, BF1, CF = liab.at(T)
    return RiccatiState(AF00, AF11, AF10, BF0, BF1, float(CF))


def solve_backward(params: ModelParams, factors: FactorParams, liab: LiabilityCoeffs,
                   steps: int, threshold: float = DEFAULT_BLOWUP_THRESHOLD,
                   on_blowup: str = "raise", backend: str | None = None) -> RiccatiSolution:
    """Fixed-step RK4 from t = T down to 0 with ``steps`` uniform steps.

    ``on_blowup="raise"`` raises :class:`RiccatiBlowUp` naming the first bad
    mesh time; ``"flag"`` returns the partial solution with ``blowup_time``
    set.
    """
    if steps < 2:
        raise ModelError("steps must be at least 2")
    if on_blowup not in ("raise", "flag"):
        raise ValueError("on_blowup must be 'raise' or 'flag'")
    _check_dims(factors, liab)
    if not liab.covers(params.T):
        raise ModelError("liability grids must cover [0, T]")
    T = params.T
    grid = np.linspace(0.0, T, steps + 1)
    dt = T / steps
    # stage times for the step t_{k+1} -> t_k
    stages = np.stack([grid[1:], grid[1:] - 0.5 * dt, grid[:-1]], axis=1)
    coef = pack_coefficients(params, factors, liab, stages.ravel()).reshape(steps, 3, -1)
    term = terminal_state(liab, T)
    out, bad = kernels.get_backend(backend).rk4_backward(
        term.pack(), coef, dt, threshold=threshold, **_constants(params, factors)
    )
    blocks = RiccatiState.unpack(out, factors.d0, factors.d)
    sol = RiccatiSolution(grid, *blocks, terminal=term)
    if bad >= 0:
        sol.blowup_time = float(grid[bad])
        if on_blowup == "raise":
            raise RiccatiBlowUp(sol.blowup_time)
    return sol


def check_global(solution: RiccatiSolution, tol: float = 1e-10) -> bool:
    """True iff the integration reached t = 0 and the stored solution is
    finite, symmetric in A00/A11 and matches its terminal data."""
    if solution.blowup_time is not None:
        return False
    if not all(np.all(np.isfinite(b)) for b in solution.blocks):
        return False
    for A in (solution.A00, solution.A11):
        if np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0) > tol:
            return False
    if solution.terminal is not None:
        last = solution.at_index(-1)
        for got, want in zip(last, solution.terminal):
            if not np.array_equal(np.asarray(got), np.asarray(want)):
                return False
    return True
