import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfeqg.model import (
    GridFunction, ModelError, ModelParams, discount_rate, g_offset, g_tilde, smallness_check,
    zeta, zeta_dot, zeta_ode_residual,
)

from oracles import rk4_zeta

BASE = dict(gamma=1.0, beta=1.0, a=1.0, delta=0.0, kappa=1.0, b=0.5, T=1.0)


params_strategy = st.builds(
    ModelParams,
    gamma=st.floats(0.1, 5.0), beta=st.floats(0.1, 5.0), a=st.floats(0.1, 5.0),
    delta=st.floats(0.0, 1.0), kappa=st.floats(0.05, 5.0), b=st.floats(0.05, 5.0),
    T=st.floats(0.1, 10.0),
)


def test_zeta_terminal_value_is_zero():
    p = ModelParams(**BASE)
    assert zeta(p, p.T) == 0.0


def test_zeta_matches_rk4_at_zero():
    p = ModelParams(**BASE)
    assert abs(zeta(p, 0.0) - rk4_zeta(p, 2000)[0]) < 1e-8


def test_zeta_outside_horizon_raises():
    p = ModelParams(**BASE)
    with pytest.raises(ModelError):
        zeta(p, 1.5)
    with pytest.raises(ModelError):
        zeta(p, -0.1)


def test_zeta_residual_midpoint_and_near_terminal():
    p = ModelParams(**BASE)
    assert abs(zeta_ode_residual(p, 0.5)) < 1e-10
    assert abs(zeta_ode_residual(p, p.T - 1e-6)) < 1e-8


def test_zeta_dot_matches_central_difference():
    p = ModelParams(**BASE)
    t = np.linspace(0.1, 0.9, 9)
    h = 1e-5
    fd = (zeta(p, t + h) - zeta(p, t - h)) / (2 * h)
    assert np.max(np.abs(fd - zeta_dot(p, t))) < 1e-8


def test_zeta_long_horizon_does_not_overflow():
    p = ModelParams(**dict(BASE, T=2000.0))
    t = np.array([0.0, 1000.0, 1999.0, 2000.0])
    z = zeta(p, t)
    zc = p.zeta_constants
    assert np.all(np.isfinite(z))
    assert abs(z[0] - 1.0 / abs(zc.deltaMinus)) < 1e-12
    assert np.all(np.isfinite(zeta_dot(p, t)))


@settings(max_examples=60, deadline=None)
@given(params_strategy, st.floats(0.0, 1.0))
def test_zeta_bounds_and_residual(p, frac):
    t = frac * p.T
    z = zeta(p, t)
    zc = p.zeta_constants
    assert zc.deltaPlus > 0 > zc.deltaMinus
    assert -1e-15 <= z <= zc.upper_bound(p.T) * (1 + 1e-12)
    assert 1 + p.b * z > 0
    scale = 1.0 + abs(p.kappa - p.b + p.gamma / p.beta) * z + p.gamma * p.b / p.beta * z * z
    assert abs(zeta_ode_residual(p, t)) < 1e-10 * scale


def test_g_terminal_value():
    p = ModelParams(gamma=2.0, beta=4.0, a=0.5, delta=0.0, kappa=1.0, b=0.5, T=1.0)
    assert g_offset(p, 1.0, 0.0) == pytest.approx(1 / 4.0, abs=1e-15)
    assert g_tilde(p, 1.0) == pytest.approx(1 / 4.0, abs=1e-15)


def _g_reference(gamma, beta, a, delta, kappa, b, rho, z, F):
    # written out term by term from the definition
    first = -delta / gamma
    second = (kappa - b) * z * rho
    third = (1 + b * z) / beta * (1 + np.log(a * beta / (gamma * (1 + b * z))) + gamma * F)
    return first + second + third


def test_g_offset_double_implementation():
    p = ModelParams(gamma=1.0, beta=2.0, a=1.0, delta=0.1, kappa=1.0, b=0.5, T=1.0, rho=0.3)
    z = zeta(p, 0.5)
    want = _g_reference(1.0, 2.0, 1.0, 0.1, 1.0, 0.5, 0.3, z, 0.2)
    assert g_offset(p, 0.5, 0.2) == pytest.approx(want, abs=1e-14)
    assert g_tilde(p, 0.5) == pytest.approx(_g_reference(1.0, 2.0, 1.0, 0.1, 1.0, 0.5, 0.3, z, 0.0),
                                            abs=1e-14)


def test_g_offset_affine_in_liability(rng):
    p = ModelParams(gamma=1.3, beta=0.7, a=1.1, delta=0.2, kappa=0.9, b=0.4, T=2.0, rho=-0.1)
    for t in rng.uniform(0, 2, 20):
        slope = discount_rate(p, t)
        assert g_offset(p, t, 1.0) - g_offset(p, t, 0.0) == pytest.approx(slope, rel=1e-13)
        F = rng.normal()
        assert g_tilde(p, t) == pytest.approx(g_offset(p, t, F) - slope * F, abs=1e-13)


def test_rho_grid_interpolation():
    rho = GridFunction([0.0, 0.5, 1.0], [0.0, 1.0, 0.0])
    p = ModelParams(**dict(BASE, rho=rho))
    assert p.rho(0.25) == pytest.approx(0.5)
    with pytest.raises(ModelError):
        ModelParams(**dict(BASE, T=2.0, rho=rho))


@pytest.mark.parametrize("field,value", [
    ("gamma", 0.0), ("beta", -1.0), ("a", 0.0), ("kappa", 0.0), ("b", 0.0), ("T", 0.0),
    ("delta", -0.1),
])
def test_model_params_validation(field, value):
    with pytest.raises(ModelError):
        ModelParams(**dict(BASE, **{field: value}))


def test_smallness_zero_data():
    r = smallness_check((1.0, 2.0), 1 / 1.5, 0.0, 0.0)
    assert r.lhs == 0 and r.R == 0 and r.holds and r.contractionFactor == 0


def test_smallness_unit_constants():
    r = smallness_check((1.0, 1.0), 1.0, 0.01, 0.0)
    assert r.cGamma == 1.0
    assert r.CGamma == 1.5
    assert r.bound == pytest.approx(1 / 48)
    assert r.R == 2 * r.lhs


def test_smallness_errors():
    with pytest.raises(ModelError):
        smallness_check((0.0, 1.0), 1.0, 0.0, 0.0)
    with pytest.raises(ModelError):
        smallness_check((1.0, 2.0), 1 / 3.0, 0.0, 0.0)
    with pytest.raises(ModelError):
        smallness_check((1.0, 2.0), 1 / 1.5, -1.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(1.0, 3.0), st.floats(0.0, 1.0),
       st.floats(0.0, 0.05), st.floats(0.0, 0.05))
def test_smallness_holds_implies_contraction(lo, ratio, w, FT, gI):
    hi = lo * ratio
    ghat = lo + w * (hi - lo)
    r = smallness_check((lo, hi), 1.0 / ghat, FT, gI)
    assert r.holds == (r.lhs < r.bound)
    if r.holds:
        assert r.contractionFactor < 1
