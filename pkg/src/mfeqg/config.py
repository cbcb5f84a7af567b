"""YAML scenario files: parsing, validation and line-numbered errors.

Layout::

    model:     gamma, beta, a, delta, kappa, b, T, rho
    factors:   n, d0, d, K0, K, m0, m, Sigma0, Sigma, x0_0, meanXi0, varXi0,
               meanX0habit, varX0habit, meanx0i, varx0i
    liability: AF00, AF11, AF10, BF0, BF1, CF   (each optional, default 0)
    market:    sigma, lambdaLow, lambdaHigh
    run:       steps, N, Ns, paths, pathsPerN, meshSizes, seed, out, threshold
    smallness: gammaLow, gammaHigh, gammaHatInvMean, FTbound, gIntegralBound,
               varsigma

``rho`` and the liability coefficients are either literal values or
``{grid: file.csv}``; the side-car CSV has a header, a time column and then
the value flattened row-major. Relative paths resolve against the config
file's directory.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from mfeqg.equilibrium import MarketSpec
from mfeqg.factors import FactorParams, LiabilityCoeffs
from mfeqg.model import GridFunction, ModelError, ModelParams


class ConfigError(ValueError):
    """Invalid scenario file; the message carries ``file:line``."""


def _line_map(node, prefix=(), out=None):
    out = {} if out is None else out
    out[prefix] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (k.value,)
            _line_map(v, key, out)
            # report the key's line rather than where its value starts
            out[key] = k.start_mark.line + 1
    return out


class _Section:
    def __init__(self, cfg: "ScenarioConfig", name: str, required: bool = True):
        self.cfg = cfg
        self.name = name
        data = cfg.raw.get(name)
        if data is None:
            if required:
                raise cfg.error((), f"missing section '{name}'")
            data = {}
        if not isinstance(data, dict):
            raise cfg.error((name,), f"section '{name}' must be a mapping")
        self.data = data
        known = _KNOWN.get(name)
        if known is not None:
            for key in data:
                if key not in known:
                    raise cfg.error((name, key), f"unknown key '{name}.{key}'")

    def error(self, key, msg):
        return self.cfg.error((self.name,) + ((key,) if key else ()), msg)

    def has(self, key):
        return key in self.data

    def get(self, key, conv=float, default=...):
        if key not in self.data:
            if default is ...:
                raise self.error(None, f"missing key '{self.name}.{key}'")
            return default
        try:
            return conv(self.data[key])
        except (TypeError, ValueError, ModelError) as exc:
            raise self.error(key, f"bad value for '{self.name}.{key}': {exc}") from None


_KNOWN = {
    "model": {"gamma", "beta", "a", "delta", "kappa", "b", "T", "rho"},
    "factors": {"n", "d0", "d", "K0", "K", "m0", "m", "Sigma0", "Sigma", "x0_0", "meanXi0",
                "varXi0", "meanX0habit", "varX0habit", "meanx0i", "varx0i"},
    "liability": set(LiabilityCoeffs.names),
    "market": {"sigma", "lambdaLow", "lambdaHigh"},
    "run": {"steps", "N", "Ns", "paths", "pathsPerN", "meshSizes", "seed", "out", "threshold"},
    "smallness": {"gammaLow", "gammaHigh", "gammaHatInvMean", "FTbound", "gIntegralBound",
                  "varsigma"},
}


def _array(value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entries")
    return arr


def _int(value):
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{value!r} is not an integer")
    return int(value)


def _int_list(value):
    return [_int(v) for v in value]


def _float_list(value):
    return [float(v) for v in value]


def read_grid_csv(path: str, value_shape: tuple) -> GridFunction:
    """Load a side-car grid: header row, then t and flattened values."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one sample")
    body = np.array(rows[1:], dtype=float)
    size = int(np.prod(value_shape)) if value_shape else 1
    if body.shape[1] != 1 + size:
        raise ValueError(f"{path}: expected {1 + size} columns, found {body.shape[1]}")
    return GridFunction(body[:, 0], body[:, 1:].reshape((len(body),) + tuple(value_shape)))


@dataclass
class RunSettings:
    steps: int = 200
    N: int = 100
    Ns: list = field(default_factory=lambda: [8, 16, 32, 64, 128, 256, 512, 1024])
    paths: int = 2000
    pathsPerN: int = 200
    meshSizes: list | None = None
    seed: int = 0
    out: str = "out"
    threshold: float = 1e8


@dataclass
class SmallnessInputs:
    gammaLow: float
    gammaHigh: float
    gammaHatInvMean: float
    FTbound: float
    gIntegralBound: float
    varsigma: float | None = None


class ScenarioConfig:
    """Validated scenario. Build with :func:`load_config`."""

    def __init__(self, raw: dict, lines: dict, path: str, text: str):
        self.raw = raw
        self.lines = lines
        self.path = path
        self.base = os.path.dirname(os.path.abspath(path))
        self.sha256 = hashlib.sha256(text.encode()).hexdigest()
        self.model = self._model()
        self.factors = self._factors()
        self.liability = self._liability()
        self.market = self._market()
        self.run = self._run()
        self.smallness = self._smallness()

    def error(self, keypath, msg) -> ConfigError:
        keypath = tuple(keypath)
        while keypath not in self.lines and keypath:
            keypath = keypath[:-1]
        line = self.lines.get(keypath, 1)
        return ConfigError(f"{self.path}:{line}: {msg}")

    def _grid_or_value(self, sec: _Section, key, shape):
        value = sec.data[key]
        if isinstance(value, dict):
            if set(value) != {"grid"}:
                raise sec.error(key, f"'{sec.name}.{key}' mapping must have the single key 'grid'")
            path = os.path.join(self.base, str(value["grid"]))
            try:
                return read_grid_csv(path, shape)
            except (OSError, ValueError, ModelError) as exc:
                raise sec.error(key, f"cannot load grid for '{sec.name}.{key}': {exc}") from None
        arr = sec.get(key, _array)
        if arr.shape != tuple(shape):
            raise sec.error(key, f"'{sec.name}.{key}' must have shape {tuple(shape)}, got {arr.shape}")
        return GridFunction.constant(arr)

    def _model(self) -> ModelParams:
        s = _Section(self, "model")
        kw = {k: s.get(k) for k in ("gamma", "beta", "a", "delta", "kappa", "b", "T")}
        kw["rho"] = self._grid_or_value(s, "rho", ()) if s.has("rho") else GridFunction.constant(0.0)
        try:
            return ModelParams(**kw)
        except ModelError as exc:
            raise s.error(None, str(exc)) from None

    def _factors(self) -> FactorParams:
        s = _Section(self, "factors")
        kw = {k: s.get(k, _int) for k in ("n", "d0", "d")}
        kw.update({k: s.get(k) for k in ("K0", "K")})
        for k in ("m0", "m", "Sigma0", "Sigma", "x0_0"):
            kw[k] = s.get(k, _array)
        for k in ("meanXi0", "varXi0", "meanX0habit", "varX0habit"):
            kw[k] = s.get(k, float, 0.0)
        for k in ("meanx0i", "varx0i"):
            kw[k] = s.get(k, _array, None)
        expected = {
            "m0": (kw["d0"],), "m": (kw["d"],), "Sigma0": (kw["d0"], kw["d0"]),
            "Sigma": (kw["d"], kw["d"]), "x0_0": (kw["d0"],),
            "meanx0i": (kw["d"],), "varx0i": (kw["d"], kw["d"]),
        }
        for k, shape in expected.items():
            if kw[k] is not None and kw[k].shape != shape:
                raise s.error(k, f"'factors.{k}' must have shape {shape}, got {kw[k].shape}")
        try:
            return FactorParams(**kw)
        except ModelError as exc:
            raise s.error(None, str(exc)) from None

    def _liability(self) -> LiabilityCoeffs:
        s = _Section(self, "liability", required=False)
        d0, d = self.factors.d0, self.factors.d
        shapes = {"AF00": (d0, d0), "AF11": (d, d), "AF10": (d, d0),
                  "BF0": (d0,), "BF1": (d,), "CF": ()}
        kw = {k: self._grid_or_value(s, k, shape) for k, shape in shapes.items() if s.has(k)}
        try:
            liab = LiabilityCoeffs(d0, d, **kw)
        except ModelError as exc:
            raise s.error(None, str(exc)) from None
        if not liab.covers(self.model.T):
            raise s.error(None, "liability grids must cover [0, T]")
        return liab

    def _market(self) -> MarketSpec | None:
        if "market" not in self.raw:
            return None
        s = _Section(self, "market")
        sigma = s.get("sigma", lambda v: np.atleast_2d(_array(v)))
        if sigma.shape != (self.factors.n, self.factors.d0):
            raise s.error("sigma", f"'market.sigma' must have shape "
                                   f"{(self.factors.n, self.factors.d0)}, got {sigma.shape}")
        try:
            return MarketSpec(sigma, s.get("lambdaLow"), s.get("lambdaHigh"))
        except ModelError as exc:
            raise s.error(None, str(exc)) from None

    def _run(self) -> RunSettings:
        s = _Section(self, "run", required=False)
        r = RunSettings()
        for k, conv in (("steps", _int), ("N", _int), ("Ns", _int_list), ("paths", _int),
                        ("pathsPerN", _int), ("meshSizes", _float_list), ("seed", _int),
                        ("out", str), ("threshold", float)):
            if s.has(k):
                setattr(r, k, s.get(k, conv))
        for k in ("steps", "N", "paths", "pathsPerN"):
            if getattr(r, k) < 1:
                raise s.error(k, f"'run.{k}' must be positive")
        if r.steps < 2:
            raise s.error("steps", "'run.steps' must be at least 2")
        if any(N < 1 for N in r.Ns):
            raise s.error("Ns", "'run.Ns' entries must be positive")
        if r.meshSizes is not None and any(not m > 0 for m in r.meshSizes):
            raise s.error("meshSizes", "'run.meshSizes' entries must be positive")
        return r

    def _smallness(self) -> SmallnessInputs | None:
        if "smallness" not in self.raw:
            return None
        s = _Section(self, "smallness")
        return SmallnessInputs(
            gammaLow=s.get("gammaLow"), gammaHigh=s.get("gammaHigh"),
            gammaHatInvMean=s.get("gammaHatInvMean"), FTbound=s.get("FTbound"),
            gIntegralBound=s.get("gIntegralBound"), varsigma=s.get("varsigma", float, None),
        )


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{path}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    return ScenarioConfig(raw, _line_map(node), path, text)
