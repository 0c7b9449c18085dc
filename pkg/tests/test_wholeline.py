import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from diffcp import gaussian_tails as gt
from diffcp.classical import InitialTail
from diffcp.kernels import RateHistory
from diffcp.measures import GridDensity, uniform_init
from diffcp.wholeline import (InitQuadrature, WholeLineError, WholeLineState,
                              asymptotic_conditions, beta_deviation_wholeline,
                              coarsening_rate_wholeline, evolve_wholeline, ks_positive_part,
                              log_rate_check, mass_integrals, positive_part_profile,
                              small_delta_integrals)

# 40-digit nested quadrature, unit-mass uniform law on [0, 1], constant A = a
IJ_ORACLE = {
    (0.5, 0.1, 2.0): (0.029606137827490401158, 0.011040863858359396829),
    (0.2, 0.3, 5.0): (0.0008943850933791623347, 0.00056179623784381979261),
}

UNIT_UNIFORM = GridDensity(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


@pytest.mark.parametrize("key", sorted(IJ_ORACLE))
def test_mass_integrals_match_oracle(key):
    a, eps, T = key
    I, J = mass_integrals(RateHistory.constant_rate(a, T), eps, UNIT_UNIFORM, T)
    assert I == pytest.approx(IJ_ORACLE[key][0], rel=1e-10)
    assert J == pytest.approx(IJ_ORACLE[key][1], rel=1e-10)


def test_mass_integrals_at_start_are_initial_moments():
    A = RateHistory.constant_rate(0.5, 3.0)
    I, J = mass_integrals(A, 0.1, UNIT_UNIFORM, 0.0)
    assert I == pytest.approx(1.0, rel=1e-14)
    assert J == pytest.approx(0.5, rel=1e-14)


def test_point_source_closed_form():
    # X ~ N(m1 y - m2, eps s2): I = Phi(mu/s), J = s phi(mu/s) + mu Phi(mu/s)
    A = RateHistory(np.array([0.0, 1.0, 2.0]), np.array([1.0, 1.4, 2.0]))
    eps, y, T = 0.2, 1.3, 2.0
    m1, m2, s2 = A.interval_moments(0.0, T)
    mu, s = m1 * y - m2, math.sqrt(eps * s2)
    I, J = mass_integrals(A, eps, InitQuadrature.point(y), T)
    assert I == pytest.approx(stats.norm.cdf(mu / s), rel=1e-13)
    assert J == pytest.approx(s * stats.norm.pdf(mu / s) + mu * stats.norm.cdf(mu / s), rel=1e-12)


def test_uniform_quadrature_moments():
    q = InitQuadrature.uniform(0.2, 1.2)
    assert q.first_moment == pytest.approx(1.0, rel=1e-14)
    assert q.mass == pytest.approx(2.0 / (1.44 - 0.04), rel=1e-14)
    # same law as the exact-tail constructors
    x = np.array([0.0, 0.1, 0.5, 1.0])
    d = uniform_init(0.2, 1.2, np.array([0.0, 0.1, 0.2, 0.5, 1.0, 1.2]))
    w, h, _ = InitialTail.uniform(0.2, 1.2).evaluate(x)
    np.testing.assert_allclose(w, np.interp(x, d.grid, d.exact_w), rtol=1e-14)
    np.testing.assert_allclose(h, [d.exact_h[0], d.exact_h[1], d.exact_h[3], d.exact_h[4]],
                               rtol=1e-14)


def test_small_delta_integrals():
    assert small_delta_integrals(0.0) == pytest.approx((1.0, 1.0), rel=1e-12)
    for delta in (0.01, 0.5, 3.0):
        r = 1.0 / math.sqrt(2.0 * delta)
        f0 = math.sqrt(math.pi / (2.0 * delta)) * special.erfcx(r)
        f1 = (1.0 - f0) / delta
        got = small_delta_integrals(delta)
        assert got[0] == pytest.approx(f0, rel=1e-10)
        assert got[1] == pytest.approx(f1, rel=1e-8)


def test_small_delta_expansion():
    f0, f1 = small_delta_integrals(1e-2)
    assert abs(f0 - (1.0 - 1e-2)) < 1e-3
    # the first moment carries a 15 delta^2 term
    assert abs(f1 - (1.0 - 3e-2 + 15e-4)) < 1e-3


def test_point_source_positive_part_is_conditioned_normal():
    traj = evolve_wholeline(InitQuadrature.point(1.0), 0.1, 2.0)
    st_end = traj.meta["state"]
    m1, m2, s2 = st_end.kernel_moments()
    s = math.sqrt(0.1 * s2)
    z = -(m1 - m2) / s
    assert st_end.lam == pytest.approx(s * gt.conditional_mean(z), rel=1e-10)
    x = np.linspace(0.0, 6.0 * s, 400)
    log_w, _, _ = positive_part_profile(st_end.init, 0.1, m1, m2, s2, x)
    surv = np.exp(log_w - log_w[0])
    assert np.max(np.abs(surv - gt.tail_probability(z, x / s))) < 1e-6


def test_exponential_profile_has_flat_beta():
    # a point source far from the origin has a Gaussian positive part; its
    # beta deviation is large, while a wide kernel makes the part near 0 flat
    A = RateHistory.constant_rate(1e-3, 1.0)
    narrow = WholeLineState(InitQuadrature.point(1.0), 1e-4, A, 1.0)
    wide = WholeLineState(InitQuadrature.point(1.0), 100.0, A, 1.0)
    assert beta_deviation_wholeline(wide, window=0.05) < beta_deviation_wholeline(narrow, 0.05)


def test_rate_undefined_before_diffusion():
    st0 = WholeLineState(InitQuadrature.point(1.0), 0.1, RateHistory.constant_rate(1.0, 1.0), 0.0)
    with pytest.raises(WholeLineError):
        coarsening_rate_wholeline(st0)


def test_bad_arguments():
    with pytest.raises(ValueError):
        evolve_wholeline(UNIT_UNIFORM, 0.0, 1.0)
    with pytest.raises(ValueError):
        evolve_wholeline(UNIT_UNIFORM, 0.1)
    with pytest.raises(ValueError):
        InitQuadrature(np.array([-1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        mass_integrals(RateHistory.constant_rate(1.0, 1.0), -0.1, UNIT_UNIFORM, 1.0)
    with pytest.raises(TypeError):
        mass_integrals(RateHistory.constant_rate(1.0, 1.0), 0.1, [1.0], 1.0)


def test_short_runs_rejected_by_trend_checks():
    traj = evolve_wholeline(UNIT_UNIFORM, 0.1, 1.0)
    with pytest.raises(ValueError):
        asymptotic_conditions(traj)
    with pytest.raises(ValueError):
        log_rate_check(traj)


def test_run_is_self_consistent(wholeline_run):
    traj = wholeline_run
    lam = traj.array("Lambda")
    assert lam[0] == pytest.approx(0.5, rel=1e-14)
    assert lam[-1] >= 120.0 * lam[0]
    assert np.all(np.diff(lam) > 0)
    assert np.max(traj.array("residual")) < 1e-10


def test_rate_matches_finite_differences(wholeline_run):
    traj = wholeline_run
    t, lam, rate = traj.array("t"), traj.array("Lambda"), traj.array("dLambda_dt")
    fd = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])
    rel = np.abs(fd / rate[1:-1] - 1.0)
    assert np.max(rel[10:]) < 1e-3


def test_final_state_rate_matches_record(wholeline_run):
    st_end = wholeline_run.meta["state"]
    assert coarsening_rate_wholeline(st_end) == pytest.approx(
        wholeline_run.array("dLambda_dt")[-1], rel=1e-12)


def test_kernel_moment_trends(wholeline_run):
    rep = asymptotic_conditions(wholeline_run)
    assert rep.A_decreasing and rep.m1_increasing and rep.m2_over_m1_increasing
    assert rep.s2_over_m2_increasing and rep.s2_over_m2_growth > 1.0
    assert rep.s2_over_m1sq_bounded


def test_positive_part_approaches_exponential(wholeline_run):
    ks = wholeline_run.array("ks_exp")
    ks = ks[np.isfinite(ks)]
    assert ks[-1] < 0.05
    assert ks[-1] < ks[1]


@pytest.mark.parametrize("z, ks", [(0.0, 0.083832206932298557982),
                                   (10.0, 0.0021739130573570172191)])
def test_ks_of_point_source_matches_truncated_normal(z, ks):
    # positive part of N(-z, 1) is the truncated normal with threshold z
    q = InitQuadrature.point(1.0)
    assert ks_positive_part(q, 1.0, 1.0, 1.0 + z, 1.0) == pytest.approx(ks, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.01, 1.0), st.floats(0.1, 6.0))
def test_property_positive_part_bounded(a, eps, T):
    I, J = mass_integrals(RateHistory.constant_rate(a, T), eps, UNIT_UNIFORM, T)
    assert 0.0 < I <= 1.0 + 1e-12
    assert J > 0.0
