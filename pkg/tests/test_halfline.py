import math

import numpy as np
import pytest
from scipy import integrate

from diffcp.classical import InitialTail
from diffcp.exitcost import const_drift_green
from diffcp.halfline import (HalfLineError, beta_profile_stats, beta_window_deviation,
                             coarsening_bounds_check, dirichlet_green, doubling_ratios,
                             evolve_halfline, lemma_init, normalize_first_moment, q_limit_check,
                             ratio_K, survival_weight)
from diffcp.kernels import RateHistory, whole_line_green
from diffcp.measures import GridDensity, ks_exponential

EPS = 0.1
FREE_DRIFT = RateHistory.constant_rate(0.0, 2.0)   # Lambda = inf, drift -1


def drift_survival(y, T):
    """Survival of drift -1 from ``y`` over ``T``: mass of the closed-form kernel."""
    return np.array([integrate.quad(lambda x: float(const_drift_green(1.0, EPS, x, yi, T)),
                                    0.0, math.inf, epsabs=1e-13)[0] for yi in np.atleast_1d(y)])


def test_green_matches_constant_drift_closed_form():
    g = dirichlet_green(FREE_DRIFT, EPS, 1.0, 1.0)
    exact = const_drift_green(1.0, EPS, g.grid, 1.0, 1.0)
    assert np.max(np.abs(g.values - exact)) / np.max(exact) < 1e-3


def test_green_basic_shape():
    g = dirichlet_green(FREE_DRIFT, EPS, 1.0, 1.0)
    assert g.values[0] == 0.0
    assert np.all(g.values >= 0)
    mass = integrate.trapezoid(g.values, g.grid)
    assert mass <= 1.0
    assert mass == pytest.approx(drift_survival(1.0, 1.0)[0], abs=1e-3)


def test_green_far_from_boundary_is_free_kernel():
    A = RateHistory.constant_rate(0.5, 1.0)
    eps, y, T = 0.01, 2.0, 0.2
    g = dirichlet_green(A, eps, y, T)
    free = whole_line_green(A, eps, g.grid, y, T)
    assert np.max(np.abs(g.values - free)) / np.max(free) < 0.01


def test_green_rejects_source_near_origin():
    with pytest.raises(ValueError):
        dirichlet_green(FREE_DRIFT, EPS, 0.01, 1.0)
    with pytest.raises(ValueError):
        dirichlet_green(FREE_DRIFT, EPS, 1.0, 1e-6)


def test_survival_matches_closed_form_kernel_mass():
    y = np.array([0.1, 0.3, 1.0, 1.5])
    u = survival_weight(FREE_DRIFT, EPS, y, 1.0)
    exact = drift_survival(y, 1.0)
    assert np.max(np.abs(u - exact)) < 1e-4


def test_survival_range_and_monotone():
    A = RateHistory(np.array([0.0, 3.0]), np.array([1.0, 4.0]))
    y = np.linspace(0.02, 3.0, 60)
    u = survival_weight(A, EPS, y, 3.0)
    assert np.all((u >= 0) & (u <= 1))
    assert np.all(np.diff(u) >= 0)


def test_survival_equals_green_mass():
    A = RateHistory(np.array([0.0, 3.0]), np.array([1.0, 4.0]))
    for y in (0.8, 1.5):
        g = dirichlet_green(A, EPS, y, 2.0)
        mass = integrate.trapezoid(g.values, g.grid)
        assert abs(mass - survival_weight(A, EPS, y, 2.0)) < 1e-4


def test_survival_errors():
    with pytest.raises(ValueError):
        survival_weight(FREE_DRIFT, EPS, 0.0, 1.0)
    with pytest.raises(ValueError):
        survival_weight(FREE_DRIFT, EPS, 1.0, 0.0)
    with pytest.raises(ValueError):
        survival_weight(FREE_DRIFT, EPS, 1.0, 1.0, levels=4)


def _ratio(traj, y, T):
    gd = dirichlet_green(traj, EPS, y, T)
    gw = whole_line_green(traj.meta["state"].rate_history, EPS, gd.grid, y, T)
    return ratio_K(gd, gw, EPS, y, T)


@pytest.mark.parametrize("y, T", [(1.0, 2.0), (2.0, 5.0), (0.5, 1.0)])
def test_ratio_is_increasing_and_log_concave(halfline_run, y, T):
    ec = _ratio(halfline_run, y, T)
    assert ec.K[0] == 0.0 and ec.q[0] == 0.0
    live = ~ec.mask
    assert np.all((ec.K[live] >= 0) & (ec.K[live] < 1))
    # resolved: 1 - K far above the ~1e-4 relative accuracy of the Green solve
    ok = live & (ec.K < 1.0 - 1e-2)
    K, x = ec.K[ok], ec.x[ok]
    assert np.all(np.diff(K) > 0)
    # -log(1-K) concave: second differences on the graded grid
    r = -np.log1p(-K)
    slope = np.diff(r) / np.diff(x)
    second = np.diff(slope) * 0.5 * (x[2:] - x[:-2])
    assert np.max(second) <= 1e-6


def test_ratio_masks_and_clamps():
    gd = GridDensity(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0, 1e-30]))
    ec = ratio_K(gd, np.array([1.0, 1.0, 1e-20]), EPS, 1.0, 1.0)
    assert ec.K[1] == pytest.approx(1.0 - 1e-15) and math.isfinite(ec.q[1])
    assert ec.mask.tolist() == [False, False, True] and math.isnan(ec.K[2])
    with pytest.raises(ValueError):
        ratio_K(gd, np.ones(2), EPS, 1.0, 1.0)


def test_normalize_first_moment():
    d = GridDensity(np.linspace(0.0, 2.0, 201), np.linspace(0.0, 2.0, 201) ** 2)
    n = normalize_first_moment(d)
    assert integrate.trapezoid(n.grid * n.values, n.grid) == pytest.approx(1.0, rel=1e-4)


def test_lemma_init_closed_form_agrees_with_quadrature():
    x = np.array([0.0, 0.5, 2.0])
    exact = lemma_init().evaluate(x)
    quad = lemma_init(lambda s: -math.expm1(-s)).evaluate(x)
    for a, b in zip(exact, quad):
        np.testing.assert_allclose(a, b, rtol=1e-8)
    assert exact[1][0] == pytest.approx(1.0, rel=1e-14)


def test_run_invariants(halfline_run):
    traj = halfline_run
    lam = traj.array("Lambda")
    assert np.all(np.diff(lam) > 0)
    assert lam[-1] >= 60.0 * lam[0]
    b0 = traj.array("beta_at_0")
    assert np.all(b0[np.isfinite(b0)] == 0.0)
    assert np.nanmax(traj.array("mass_error")) < 1e-3
    st = traj.meta["state"]
    assert st.density.values[0] == 0.0
    assert np.all(st.density.values >= 0)


def test_rate_matches_finite_differences(halfline_run):
    traj = halfline_run
    t, lam, rate = traj.array("t"), traj.array("Lambda"), traj.array("dLambda_dt")
    fd = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])
    smooth = lam[1:-1] > 2.0 * lam[0]
    assert np.max(np.abs(fd[smooth] / rate[1:-1][smooth] - 1.0)) < 2e-3


def test_final_law_close_to_exponential(halfline_run):
    st = halfline_run.meta["state"]
    assert ks_exponential(st.density) < 0.05
    b0, bmax, dev = beta_profile_stats(st.density, st.lam)
    assert b0 == 0.0 and math.isfinite(bmax)
    assert dev == pytest.approx(beta_window_deviation(st, st.lam / 4.0), rel=1e-12)


def test_beta_window_excludes_boundary_layer(halfline_run):
    st = halfline_run.meta["state"]
    wide = beta_window_deviation(st, st.lam / 4.0)
    assert wide < 0.15
    assert wide < beta_window_deviation(st, st.lam / 100.0)
    with pytest.raises(ValueError):
        beta_window_deviation(st, 1e9)


def test_bounds(halfline_run, halfline_grid):
    rep = coarsening_bounds_check(halfline_run, lemma_eps=EPS, grid=halfline_grid)
    assert math.isfinite(rep.beta_ceiling) and math.isfinite(rep.rate_ceiling)
    assert rep.doubling_min >= 1.01
    assert rep.lemma_ratio > 1.0


def test_doubling_needs_long_history():
    with pytest.raises(ValueError):
        doubling_ratios(RateHistory(np.array([0.0, 0.5]), np.array([1.0, 1.2])))
    short = evolve_halfline(InitialTail.uniform(0.2, 1.2), EPS, 0.5)
    with pytest.raises(ValueError):
        coarsening_bounds_check(short)


def test_exit_cost_limit_along_run(halfline_run):
    x = np.linspace(0.5, 2.0, 7)
    rep = q_limit_check(halfline_run, EPS, 1.0, x)
    last = rep.q_over_2x[-1]
    assert np.all((last >= 0.8) & (last <= 1.2))
    assert rep.envelope_violation() <= 0.0
    assert rep.doubling_min > 1.0


def test_q_limit_requires_doubling():
    A = RateHistory(np.array([0.0, 1.0, 5.0]), np.array([1.0, 1.0, 1.0 + 1e-9]))
    with pytest.raises(ValueError):
        q_limit_check(A, EPS, 1.0, [1.0])


def test_bad_arguments():
    tail = InitialTail.uniform(0.2, 1.2)
    with pytest.raises(ValueError):
        evolve_halfline(tail, 0.0, 1.0)
    with pytest.raises(ValueError):
        evolve_halfline(tail, EPS)
    x = np.linspace(0.0, 2.0, 101)
    with pytest.raises(ValueError):
        evolve_halfline(GridDensity(x, x * x), EPS, 1.0)


def test_conservation_guard_trips_on_unresolved_start():
    # a law with full density at the origin loses first moment at once
    with pytest.raises(HalfLineError):
        evolve_halfline(InitialTail.uniform(0.0, 1.0 / 3.0), EPS, 1.0)
