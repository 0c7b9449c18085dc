import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from diffcp.exitcost import (CoverageError, PathDiscretization, action, char_endpoint,
                             const_drift_green, exit_mass_tail_bound, exit_time_density,
                             exit_time_mass, g2_growth_margin, lower_envelope, q0_bruteforce,
                             q0_characteristics, q_const_drift, survival_limit, upper_envelope)
from diffcp.kernels import AffineDrift, RateHistory

DOWN = AffineDrift.constant(-1.0)


def linear_history(T):
    t = np.linspace(0.0, T, 401)
    return RateHistory(t, 1.0 + t)


def test_green_is_free_gaussian_times_image_factor():
    k, eps, t, xp = 1.0, 0.1, 1.0, 1.0
    x = np.linspace(0.0, 3.0, 61)
    free = stats.norm.pdf(x, loc=xp - k * t, scale=math.sqrt(eps * t))
    np.testing.assert_allclose(const_drift_green(k, eps, x, xp, t),
                               free * (1.0 - np.exp(-2.0 * x * xp / (eps * t))), rtol=1e-13)
    assert const_drift_green(k, eps, 0.0, xp, t) == 0.0
    assert const_drift_green(k, eps, 1e-9, xp, t) < 1e-7


def test_green_mass_is_survival_toward_origin():
    k, eps, t, xp = 1.0, 0.1, 1.0, 1.0
    mass, _ = integrate.quad(lambda x: float(const_drift_green(k, eps, x, xp, t)), 0.0, np.inf)
    s = math.sqrt(eps * t)
    exact = stats.norm.cdf((xp - k * t) / s) - math.exp(2 * k * xp / eps) * stats.norm.cdf(
        (-xp - k * t) / s)
    assert mass == pytest.approx(exact, rel=1e-9)


def test_exit_mass_limits():
    x = np.array([0.05, 0.1, 0.5])
    np.testing.assert_allclose(exit_time_mass(1.0, 0.1, x), np.exp(-20.0 * x), rtol=1e-15)
    np.testing.assert_allclose(survival_limit(1.0, 0.1, x) + exit_time_mass(1.0, 0.1, x), 1.0,
                               rtol=1e-15)
    np.testing.assert_allclose(exit_time_mass(1.0, 0.1, x, 20.0), np.exp(-20.0 * x), atol=1e-4)


@pytest.mark.parametrize("T", [0.5, 2.0, 8.0])
def test_exit_mass_is_density_integral_and_defect_bounded(T):
    k, eps, x = 1.0, 0.2, 0.4
    dens, _ = integrate.quad(lambda t: float(exit_time_density(k, eps, x, t)), 0.0, T,
                             epsabs=1e-14, limit=200)
    finite = float(exit_time_mass(k, eps, x, T))
    assert finite == pytest.approx(dens, abs=1e-10)
    defect = float(exit_time_mass(k, eps, x)) - finite
    assert 0.0 <= defect <= exit_mass_tail_bound(k, eps, x, T) * (1 + 1e-12)


@pytest.mark.parametrize("eps", [0.05, 0.1])
def test_q_const_drift_near_linear_at_T20(eps):
    x = np.linspace(0.05, 2.0, 40)
    q = q_const_drift(1.0, eps, x, 20.0)
    assert np.max(np.abs(q / (2.0 * x) - 1.0)) < 0.1


def test_q_linear_profile_is_stationary():
    x = np.linspace(0.05, 2.0, 40)
    q = q_const_drift(1.0, 0.1, x, 5.0, q0=lambda z: 2.0 * z)
    assert np.max(np.abs(q / (2.0 * x) - 1.0)) < 5e-3


def test_action_of_exact_trajectory_vanishes():
    # drift +1: x' = 1 from the origin is an exact trajectory
    up = AffineDrift.constant(1.0)
    p = PathDiscretization(2.0, 5.0, np.linspace(0.0, 3.0, 17))
    assert action(p, up) < 1e-24


@pytest.mark.parametrize("x", [0.25, 1.0, 3.0])
def test_straight_exit_path_costs_two_x(x):
    T = 10.0
    p = PathDiscretization(T - x, T, np.linspace(0.0, x, 9))
    assert action(p, DOWN) == pytest.approx(2.0 * x, rel=1e-13)


def test_optimal_exit_time_family():
    k, x, T = 1.5, 0.8, 10.0
    res = optimize.minimize_scalar(lambda d: (x + k * d) ** 2 / (2 * d), bounds=(1e-6, T),
                                   method="bounded", options={"xatol": 1e-12})
    assert res.fun == pytest.approx(2 * k * x, rel=1e-10)
    assert res.x == pytest.approx(x / k, rel=1e-5)


@pytest.mark.parametrize("x", [0.25, 1.0, 4.0])
def test_bruteforce_constant_drift(x):
    assert q0_bruteforce(x, 1.0, 40.0, DOWN) == pytest.approx(2.0 * x, rel=0.02)
    assert q0_characteristics(x, 1.0, 40.0, DOWN) == pytest.approx(2.0 * x, rel=0.02)


def test_bruteforce_nested_knots_do_not_increase():
    A = linear_history(10.0)
    coarse = q0_bruteforce(1.0, 1.0, 10.0, A, knots=17, tau_grid=32)
    fine = q0_bruteforce(1.0, 1.0, 10.0, A, knots=33, tau_grid=32)
    assert fine <= coarse * (1 + 1e-12)


def test_bruteforce_resolution_floor():
    with pytest.raises(ValueError):
        q0_bruteforce(1.0, 1.0, 10.0, DOWN, knots=8)


@pytest.mark.parametrize("T", [5.0, 20.0])
def test_routes_agree_inside_envelopes(T):
    A = linear_history(T)
    bf = q0_bruteforce(1.0, 1.0, T, A)
    ch = q0_characteristics(1.0, 1.0, T, A)
    assert bf == pytest.approx(ch, rel=0.02)
    assert lower_envelope(A, 1.0, 1.0, T) <= ch <= upper_envelope(A, 1.0, 1.0, T)


def test_exit_cost_ratio_approaches_one():
    vals = [q0_characteristics(1.0, 1.0, T, linear_history(T)) / 2.0 for T in (5.0, 10.0, 20.0, 40.0)]
    assert np.all(np.diff(vals) > 0)
    assert 0.9 < vals[-1] < 1.0


def test_characteristics_coverage():
    with pytest.raises(CoverageError):
        q0_characteristics(25.0, 1.0, 10.0, DOWN)
    with pytest.raises(ValueError):
        char_endpoint(DOWN, 5.0, 5.0)


def test_g2_growth_margin_nonnegative_once_variance_dominates():
    A = linear_history(20.0)
    for T in (5.0, 8.0, 15.0):
        m1, m2, s2 = A.moments_from_start(T)
        assert s2 >= 2.0 * m2
        for s in (T, T + 1.0, 19.0):
            assert g2_growth_margin(A, T, s) >= -1e-12
    # before that the margin can be negative
    assert g2_growth_margin(A, 1.0, 2.0) < 0


def test_path_validation():
    with pytest.raises(ValueError):
        PathDiscretization(0.0, 1.0, [0.0, 1.0])
    with pytest.raises(ValueError):
        PathDiscretization(0.5, 1.0, [0.1, 1.0])
    with pytest.raises(ValueError):
        PathDiscretization(0.5, 1.0, [0.0, -0.1, 1.0])


def test_positive_parameters_required():
    with pytest.raises(ValueError):
        const_drift_green(0.0, 0.1, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        exit_time_mass(1.0, 0.1, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.05, 1.0), st.floats(0.01, 3.0), st.floats(0.1, 10.0))
def test_property_exit_mass_monotone_in_horizon(k, eps, x, T):
    a = float(exit_time_mass(k, eps, x, T))
    b = float(exit_time_mass(k, eps, x, 2 * T))
    assert 0.0 <= a <= b * (1 + 1e-12) <= float(exit_time_mass(k, eps, x)) * (1 + 1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.5, 5.0))
def test_property_straight_path_action(x, slope):
    T = 20.0
    d = x / slope
    p = PathDiscretization(T - d, T, np.linspace(0.0, x, 5))
    assert action(p, DOWN) == pytest.approx(0.5 * (slope + 1.0) ** 2 * d, rel=1e-12)
