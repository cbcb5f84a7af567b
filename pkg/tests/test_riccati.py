import io

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import random_liability, zero_scenario
from mfeqg.factors import FactorParams, LiabilityCoeffs
from mfeqg.model import GridFunction, ModelError, ModelParams, g_tilde, discount_rate
from mfeqg.riccati import (
    RiccatiBlowUp, RiccatiSolution, RiccatiState, check_global, rhs, solve_backward,
    split_sigma0,
)
from oracles import integrating_factor_C, riccati_rhs_loops


def dense_scenario(rng, d0=2, d=2, n=1):
    params = ModelParams(gamma=1.2, beta=0.8, a=1.0, delta=0.05, kappa=0.9, b=0.4, T=1.0, rho=0.1)
    factors = FactorParams(n, d0, d, 0.7, 1.1, rng.normal(size=d0), rng.normal(size=d),
                           0.4 * rng.normal(size=(d0, d0)), 0.4 * rng.normal(size=(d, d)),
                           rng.normal(size=d0), meanx0i=rng.normal(size=d),
                           varx0i=0.1 * np.eye(d))
    return params, factors, random_liability(rng, d0, d)


def random_state(rng, d0, d):
    S0 = rng.normal(size=(d0, d0))
    S1 = rng.normal(size=(d, d))
    return RiccatiState((S0 + S0.T) / 2, (S1 + S1.T) / 2, rng.normal(size=(d, d0)),
                        rng.normal(size=d0), rng.normal(size=d), float(rng.normal()))


def test_split_sigma0_examples(rng):
    S = np.array([[1.0, 2.0], [3.0, 4.0]])
    hat, chk = split_sigma0(S, 1)
    assert np.array_equal(hat, [[1, 0], [3, 0]])
    assert np.array_equal(chk, [[0, 2], [0, 4]])
    hat, chk = split_sigma0(S, 2)
    assert np.array_equal(hat, S) and not chk.any()
    S3 = rng.normal(size=(3, 3))
    hat, chk = split_sigma0(S3, 2)
    assert np.array_equal(hat + chk, S3)
    u = rng.normal(size=3)
    proj = u @ S3
    proj[2:] = 0.0
    assert np.allclose(u @ hat, proj, atol=1e-15)


@pytest.mark.parametrize("n", [0, 3])
def test_split_sigma0_range(n):
    with pytest.raises(ModelError):
        split_sigma0(np.eye(2), n)


def test_rhs_zero_state_gives_minus_g_tilde():
    params, factors, liab = zero_scenario()
    out = rhs(0.3, RiccatiState.zeros(2, 2), params, factors, liab)
    for block in out[:5]:
        assert not np.any(block)
    assert out.C == pytest.approx(-g_tilde(params, 0.3), abs=1e-15)


def test_rhs_identity_a00_only_linear_term():
    params, factors, liab = zero_scenario()
    state = RiccatiState.zeros(2, 2)._replace(A00=np.eye(2))
    out = rhs(0.4, state, params, factors, liab)
    want = (2 * factors.K0 + discount_rate(params, 0.4)) * np.eye(2)
    assert np.allclose(out.A00, want, atol=1e-15, rtol=0)


@pytest.mark.parametrize("backend", ["python", "cython"])
@pytest.mark.parametrize("dims", [(2, 2, 1), (3, 2, 2), (1, 3, 1)])
def test_rhs_matches_loop_transcription(rng, backend, dims):
    d0, d, n = dims
    params, factors, liab = dense_scenario(rng, d0, d, n)
    for t in (0.0, 0.37, 1.0):
        state = random_state(rng, d0, d)
        got = rhs(t, state, params, factors, liab, backend=backend)
        want = riccati_rhs_loops(t, state, params, factors, liab)
        for g, w in zip(got, want):
            assert np.max(np.abs(np.asarray(g) - w)) < 1e-12


def test_rhs_dimension_mismatch(rng):
    params, factors, liab = dense_scenario(rng)
    with pytest.raises(ModelError):
        rhs(0.1, RiccatiState.zeros(3, 2), params, factors, liab)
    with pytest.raises(ModelError):
        rhs(0.1, RiccatiState.zeros(2, 2), params, factors, LiabilityCoeffs.zeros(3, 2))


def test_zero_scenario_c_matches_integrating_factor():
    params, factors, liab = zero_scenario(rho=GridFunction([0.0, 0.5, 1.0], [0.1, 0.25, 0.2]))
    sol = solve_backward(params, factors, liab, 1000)
    for block in (sol.A00, sol.A11, sol.A10, sol.B0, sol.B1):
        assert np.max(np.abs(block)) < 1e-10
    want = integrating_factor_C(params, sol.grid)
    assert np.max(np.abs(sol.C - want)) < 1e-8


def test_terminal_slice_equals_liability(rng):
    params, factors, liab = dense_scenario(rng)
    sol = solve_backward(params, factors, liab, 50)
    for got, want in zip(sol.at_index(-1), liab.at(params.T)):
        assert np.array_equal(got, want)
    for got, want in zip(sol.value(params.T), liab.at(params.T)):
        assert np.array_equal(got, want)


def test_symmetry_preserved(reference):
    sol = solve_backward(reference.model, reference.factors, reference.liability, 200)
    for A in (sol.A00, sol.A11):
        assert np.max(np.abs(A - np.swapaxes(A, 1, 2))) < 1e-10
    assert check_global(sol)


def test_value_is_exact_at_mesh_points(reference):
    sol = solve_backward(reference.model, reference.factors, reference.liability, 40)
    vals = sol.value(sol.grid)
    for got, want in zip(vals, sol.blocks):
        assert np.array_equal(got, want)
    mid = sol.value(0.5 * (sol.grid[3] + sol.grid[4]))
    assert np.allclose(mid.C, 0.5 * (sol.C[3] + sol.C[4]), rtol=0, atol=1e-15)
    with pytest.raises(ModelError):
        sol.value(1.5)


def test_rk4_order(reference):
    cfg = reference
    ref = solve_backward(cfg.model, cfg.factors, cfg.liability, 10000)

    def err(M):
        s = solve_backward(cfg.model, cfg.factors, cfg.liability, M)
        r = 10000 // M
        return max(np.max(np.abs(a - b[::r])) for a, b in zip(s.blocks, ref.blocks))

    order = np.log2(err(200) / err(400))
    assert 3.5 <= order <= 4.5


def test_blowup_raises_and_flags():
    # huge positive terminal block with large common noise
    params = ModelParams(gamma=1.0, beta=1.0, a=1.0, delta=0.1, kappa=1.0, b=0.5, T=1.0)
    factors = FactorParams(1, 1, 1, 1.0, 1.0, [0.0], [0.0], [[2.0]], [[0.1]], [0.0])
    liab = LiabilityCoeffs(1, 1, AF00=[[1e6]])
    with pytest.raises(RiccatiBlowUp) as info:
        solve_backward(params, factors, liab, 200)
    assert 0 < info.value.t < 1
    sol = solve_backward(params, factors, liab, 200, on_blowup="flag")
    assert sol.blowup_time == info.value.t
    assert not check_global(sol)
    assert np.all(np.isnan(sol.A00[:np.searchsorted(sol.grid, sol.blowup_time)]))


def test_blowup_time_matches_scalar_oracle():
    # scalar A00 equation in reversed time s = T - t:
    # dA/ds = gamma S^2 A^2 - (2 K0 + k) A + k AF, which explodes in finite time
    params = ModelParams(gamma=1.0, beta=1.0, a=1.0, delta=0.1, kappa=1.0, b=0.5, T=1.0)
    factors = FactorParams(1, 1, 1, 1.0, 1.0, [0.0], [0.0], [[2.0]], [[0.0]], [0.0])
    liab = LiabilityCoeffs(1, 1, AF00=[[1.0]])
    threshold = 1e8

    def f(s, y):
        k = discount_rate(params, params.T - s)
        return [4.0 * y[0] ** 2 - (2.0 + k) * y[0] + k * 1.0]

    def hit(s, y):
        return y[0] - threshold
    hit.terminal = True
    ode = solve_ivp(f, (0.0, 1.0), [1.0], events=hit, rtol=1e-12, atol=1e-12, method="LSODA")
    t_star = params.T - ode.t_events[0][0]
    steps = 4000
    sol = solve_backward(params, factors, liab, steps, threshold=threshold, on_blowup="flag")
    assert sol.blowup_time is not None
    # the first mesh point flagged lies within a couple of steps of the oracle
    assert abs(sol.blowup_time - t_star) <= 2.0 / steps


def test_zero_scenario_is_global():
    params, factors, liab = zero_scenario()
    assert check_global(solve_backward(params, factors, liab, 20))


def test_check_global_detects_broken_invariants(reference):
    sol = solve_backward(reference.model, reference.factors, reference.liability, 20)
    sol.A00 = sol.A00.copy()
    sol.A00[3, 0, 1] += 1e-6
    assert not check_global(sol)


def test_solve_backward_argument_errors(reference):
    with pytest.raises(ModelError):
        solve_backward(reference.model, reference.factors, reference.liability, 1)
    with pytest.raises(ValueError):
        solve_backward(reference.model, reference.factors, reference.liability, 10, on_blowup="x")


def test_csv_roundtrip(reference, tmp_path):
    sol = solve_backward(reference.model, reference.factors, reference.liability, 30)
    path = tmp_path / "ric.csv"
    sol.to_csv(path, comment="test")
    back = RiccatiSolution.from_csv(path)
    assert np.array_equal(back.grid, sol.grid)
    for a, b in zip(back.blocks, sol.blocks):
        assert np.array_equal(a, b)
    text = sol.to_csv()
    assert text.splitlines()[0].startswith("t,A00[0][0],A00[0][1]")
    back2 = RiccatiSolution.from_csv(io.StringIO(text))
    assert np.array_equal(back2.C, sol.C)
