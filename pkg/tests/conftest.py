import os

import numpy as np
import pytest

from mfeqg.config import load_config
from mfeqg.factors import FactorParams, LiabilityCoeffs
from mfeqg.model import ModelParams

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def config_path(name):
    return os.path.join(CONFIGS, name)


@pytest.fixture(scope="session")
def reference():
    return load_config(config_path("reference.yaml"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def zero_scenario(d0=2, d=2, n=1, beta=2.0, rho=0.3):
    params = ModelParams(gamma=1.0, beta=beta, a=1.0, delta=0.1, kappa=1.0, b=0.5, T=1.0, rho=rho)
    factors = FactorParams(n, d0, d, 1.0, 1.0, np.zeros(d0), np.zeros(d), np.zeros((d0, d0)),
                           np.zeros((d, d)), np.zeros(d0))
    return params, factors, LiabilityCoeffs.zeros(d0, d)


def random_liability(rng, d0, d, scale=0.2):
    S0 = rng.normal(size=(d0, d0))
    S1 = rng.normal(size=(d, d))
    return LiabilityCoeffs(
        d0, d,
        AF00=scale * (S0 + S0.T) / 2, AF11=scale * (S1 + S1.T) / 2,
        AF10=scale * rng.normal(size=(d, d0)), BF0=scale * rng.normal(size=d0),
        BF1=scale * rng.normal(size=d), CF=float(scale * rng.normal()),
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(number, name, ok, detail):
    line = f"[{number}] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
