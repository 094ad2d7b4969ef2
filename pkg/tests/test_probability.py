import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gksl_scattering import probability as pr
from gksl_scattering.kinematics import ModelParams

PARAMS = ModelParams(0.2, 0.02, 1.0)


def diagonal_gamma(x, m_s, m_e):
    s = -4 * (m_e * x) ** 2
    A = -(s + 2 * m_s**2) / 2
    a = (s + 4 * m_s**2) * (s + 4 * m_e**2) / (s + 2 * m_s**2) ** 2
    ks = math.sqrt((m_e * x) ** 2 - m_e**2)
    L = math.log((1 + math.sqrt(a)) / (1 - math.sqrt(a)))
    return ks / (m_e * x) * math.pi * 4 / A**2 * (1 / (1 - a) + L / (2 * math.sqrt(a)))


def test_state_validation():
    with pytest.raises(ValueError):
        pr.SuperposedPairState((1, 0, 0), (1, 1, 0))
    with pytest.raises(ValueError):
        pr.SuperposedPairState((1, 0, 0), (0, 2, 0))
    with pytest.raises(ValueError):
        pr.SuperposedPairState.at_energy(0.01, 0.0, ModelParams(0.2, 0.5, 1.0))
    st_ = pr.SuperposedPairState.at_energy(1.5, 0.3, PARAMS)
    assert st_.s(PARAMS.m_s) == pytest.approx(-9.0)


@given(st.floats(0.05, 1.0), st.floats(0.0, 2 * math.pi))
def test_sigma_zero_below_threshold(x, delta):
    assert pr.sigma_closed(x, delta, PARAMS) == 0.0
    assert pr.sigma_numeric(x, delta, PARAMS, n=100).value == 0.0


@given(st.floats(1.05, 6.0), st.floats(0.0, math.pi))
def test_probability_linear_in_cos_delta(x, delta):
    st0 = pr.SuperposedPairState.at_energy(x, 0.0, PARAMS)
    stp = pr.SuperposedPairState.at_energy(x, math.pi, PARAMS)
    std = pr.SuperposedPairState.at_energy(x, delta, PARAMS)
    p0, pp, pd = (pr.annihilation_probability(s, PARAMS, route="mc", n=2000, seed=4).real for s in (st0, stp, std))
    c = math.cos(delta)
    assert pd == pytest.approx(0.5 * (1 + c) * p0 + 0.5 * (1 - c) * pp, rel=1e-10, abs=1e-18)


def test_routes_agree():
    st_ = pr.SuperposedPairState.at_energy(1.7, 0.4, PARAMS)
    cm = pr.annihilation_probability(st_, PARAMS, route="cm")
    mc = pr.annihilation_probability(st_, PARAMS, route="mc", n=200_000, seed=2)
    assert abs(cm.real - mc.real) < 3 * mc.abs_error


def test_numeric_diagonal_matches_analytic_kernel():
    x = 1.6
    params = PARAMS.replace(epsilon_schedule=(1e-6, 5e-7, 2.5e-7))
    st_ = pr.SuperposedPairState.at_energy(x, math.pi / 2, params)
    p = pr.annihilation_probability(st_, params, volume_time=1.0, route="cm")
    g = diagonal_gamma(x, params.m_s, params.m_e)
    expected = 16 * params.lam**4 / (2 * math.pi) ** 4 / (2 * x * x) * 2 * g
    assert p.real == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("x", [1.1, 2.0, 4.0])
def test_closed_form_diagonal_is_twice_numeric(x):
    # the printed diagonal terms are twice the phase-space result; the ratio
    # at delta = pi/2 (no cross term) is therefore exactly 2
    g = diagonal_gamma(x, PARAMS.m_s, PARAMS.m_e)
    numeric = 16 * PARAMS.lam**4 / (2 * math.pi) ** 4 / (2 * x * x) * 2 * g
    s = -4 * x * x
    assert pr.probability_closed(s, math.pi / 2, PARAMS, volume_time=1.0) == pytest.approx(2 * numeric, rel=1e-9)


@given(st.floats(1.0001, 50.0), st.floats(0.0, math.pi))
def test_closed_bracket_stable_form(x, delta):
    # compare with the textbook expression where it is well conditioned
    p = PARAMS
    s = -4 * x * x
    a = (s + 4 * p.m_s**2) * (s + 4) / (s + 2 * p.m_s**2) ** 2
    naive = 16 / (1 - a) + (8 + math.cos(delta) * (11 - a) / 2) * math.log((1 + math.sqrt(a)) / (1 - math.sqrt(a))) / math.sqrt(a)
    got = pr.closed_bracket(s, delta, p)
    if 1 - a > 1e-6:
        assert got == pytest.approx(naive, rel=1e-6)
    assert math.isfinite(got) and got > 0


def test_sigma_closed_decreases_at_high_energy():
    xs = np.linspace(3, 10, 30)
    for d in (0.0, math.pi / 2, math.pi):
        vals = [pr.sigma_closed(x, d, PARAMS) for x in xs]
        assert np.all(np.diff(vals) < 0)


def test_scan_rows_and_factors():
    rows = pr.sigma_scan(0.5, 3.0, 6, [0.0, math.pi], PARAMS, n=5000, seed=1)
    assert len(rows) == 12
    assert [r.x for r in rows[:2]] == [0.5, 0.5]
    assert all(r.sigma_closed == r.sigma_numeric == 0.0 for r in rows if r.x < 1)
    f = pr.discrepancy_factors(rows)
    assert set(f) == {0.0, math.pi}
    assert all(v > 1 for v in f.values())
    assert 0.0 <= pr.agreement_fraction(rows) <= 1.0
    assert math.isnan(rows[0].ratio)
    assert rows[0].agrees


def test_scan_validation():
    with pytest.raises(ValueError):
        pr.sigma_scan(2.0, 1.0, 5, [0.0], PARAMS)
    with pytest.raises(ValueError):
        pr.sigma_scan(0.5, 1.0, 1, [0.0], PARAMS)
    with pytest.raises(ValueError):
        pr.sigma_closed(-1.0, 0.0, PARAMS)


@given(st.floats(1.05, 5.0), st.floats(0.0, math.pi))
def test_probability_even_in_delta(x, delta):
    a = pr.annihilation_probability(pr.SuperposedPairState.at_energy(x, delta, PARAMS), PARAMS)
    b = pr.annihilation_probability(pr.SuperposedPairState.at_energy(x, -delta, PARAMS), PARAMS)
    assert a.real == pytest.approx(b.real, rel=1e-12)


@given(st.floats(1.05, 4.0), st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))
def test_probability_rotation_invariant(x, alpha, beta):
    from gksl_scattering.kinematics import rotation_matrix

    R = rotation_matrix((math.sin(alpha) * math.cos(beta), math.sin(alpha) * math.sin(beta), math.cos(alpha)), beta)
    axes = (R @ np.array([0.0, 0.0, 1.0]), R @ np.array([1.0, 0.0, 0.0]))
    a = pr.annihilation_probability(pr.SuperposedPairState.at_energy(x, 0.7, PARAMS), PARAMS)
    b = pr.annihilation_probability(pr.SuperposedPairState.at_energy(x, 0.7, PARAMS, axes=axes), PARAMS)
    assert abs(a.real - b.real) <= 3 * (a.abs_error + b.abs_error) + 1e-6 * abs(a.real)


@pytest.mark.parametrize("x", [1.3, 2.5])
def test_sigma_dimensionless_under_mass_scaling(x):
    big = PARAMS.scaled(2.0)
    for d in (0.0, math.pi):
        assert pr.sigma_closed(x, d, big) == pytest.approx(pr.sigma_closed(x, d, PARAMS), rel=1e-12)
        a = pr.sigma_numeric(x, d, PARAMS, route="cm")
        b = pr.sigma_numeric(x, d, big, route="cm")
        assert b.real == pytest.approx(a.real, rel=1e-6)


def test_sigma_numeric_independent_of_volume_time():
    a = pr.sigma_numeric(1.8, 0.4, PARAMS, route="cm")
    b = pr.sigma_numeric(1.8, 0.4, PARAMS.replace(volume_time=37.0), route="cm")
    assert a.real == b.real
    st_ = pr.SuperposedPairState.at_energy(1.8, 0.4, PARAMS)
    p1 = pr.annihilation_probability(st_, PARAMS, volume_time=1.0)
    p2 = pr.annihilation_probability(st_, PARAMS, volume_time=5.0)
    assert p2.real == pytest.approx(5.0 * p1.real, rel=1e-14)


def test_sigma_closed_continuous_at_threshold():
    vals = [pr.sigma_closed(1 + h, 0.0, PARAMS) for h in (1e-2, 1e-4, 1e-6, 1e-8)]
    # sigma vanishes like sqrt(x - 1) at threshold
    assert all(v > 0 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] / vals[0] == pytest.approx(1e-3, rel=0.1)
