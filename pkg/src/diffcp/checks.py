"""Named pass/fail checks with measured values, grouped by scenario."""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass

import numpy as np

from . import gaussian_tails as gt
from .exitcost import (CoverageError, const_drift_green, exit_time_mass, lower_envelope,
                       q0_bruteforce, q0_characteristics, q_const_drift, upper_envelope)
from .halfline import (BoundsReport, QLimitReport, beta_window_deviation, dirichlet_green)
from .kernels import AffineDrift, RateHistory
from .trajectory import Trajectory, write_csv

__all__ = ["Check", "check", "summary_csv", "appendix_checks", "classical_checks",
           "wholeline_checks", "halfline_checks", "oracle_checks", "qcost_checks",
           "bounds_checks", "qlimit_checks", "first_crossing"]

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    relation: str
    bound: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.value) and _OPS[self.relation](self.value, self.bound))

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.6g} {self.relation} {self.bound:.6g}"


def check(name: str, value, relation: str, bound: float) -> Check:
    if relation not in _OPS:
        raise ValueError(f"unknown relation {relation}")
    return Check(name, float(value), relation, float(bound))


def summary_csv(checks, path=None) -> str:
    rows = [(c.name, c.value, c.relation, c.bound, "pass" if c.passed else "fail") for c in checks]
    return write_csv(["check", "value", "relation", "bound", "result"], rows, path)


def _tol(tol, name, default):
    return float(tol.get(name, default)) if tol else default


def first_crossing(traj: Trajectory, ratio: float):
    """Index of the first sample with ``Lambda/Lambda(0) > ratio``, or ``None``."""
    lam = traj.array("Lambda")
    idx = np.nonzero(lam > ratio * lam[0])[0]
    return int(idx[0]) if idx.size else None


def appendix_checks(tol=None) -> list[Check]:
    out = []
    z = np.round(np.arange(-6.0, 6.0 + 1e-9, 0.01), 10)
    m = gt.conditional_mean(z)
    out.append(check("mean_strictly_decreasing_min_gap", float(np.min(-np.diff(m))), ">", 0.0))
    zh = np.arange(-6.0, 6.0 + 1e-9, 0.5)
    res = max(abs(gt.second_moment_identity(float(v))) for v in zh)
    out.append(check("second_moment_identity_residual", res, "<", _tol(tol, "h8", 1e-8)))
    za = np.arange(1.01, 10.0 + 1e-9, 0.01)
    ma = gt.conditional_mean(za)
    out.append(check("upper_bound_1_over_z_margin", float(np.min(1.0 / za - ma)), ">", 0.0))
    out.append(check("lower_bound_1_over_z_minus_2_over_z3_margin",
                     float(np.min(ma - (1.0 / za - 2.0 / za ** 3))), ">", 0.0))
    # beyond z = -8 the gap m - |z| ~ exp(-z^2/2) falls below double resolution
    zb = np.arange(-8.0, -0.005, 0.01)
    mb = gt.conditional_mean(zb)
    zb_all = np.arange(-10.0, -0.005, 0.01)
    r2pi = math.sqrt(2.0 / math.pi)
    out.append(check("negative_z_lower_margin",
                     float(np.min(mb - np.maximum(np.abs(zb), r2pi))), ">", 0.0))
    zc = np.arange(-10.0, -8.0, 0.01)
    out.append(check("negative_z_lower_margin_unresolved_range",
                     float(np.min(gt.conditional_mean(zc) - np.abs(zc))), ">=", 0.0))
    out.append(check("negative_z_upper_margin", float(np.min(r2pi + np.abs(zb_all) - gt.conditional_mean(zb_all))), ">", 0.0))
    zi = np.arange(0.01, 10.0 + 1e-9, 0.01)
    mills = gt.mills_ratio(zi)
    out.append(check("mills_inequality_margin",
                     float(min(np.min(1.0 / zi - mills), np.min(mills - (1.0 / zi - 1.0 / zi ** 3)))),
                     ">", 0.0))
    zr = np.arange(0.0, 3.0 + 1e-9, 0.25)
    m0 = gt.conditional_mean(0.0)
    err = max(abs(gt.riccati_integrate(0.0, m0, float(v)) - gt.conditional_mean(float(v)))
              for v in zr[1:])
    out.append(check("riccati_vs_mills", err, "<", _tol(tol, "riccati", 1e-6)))
    ks = [gt.scaled_ks_to_exponential(v) for v in (0.0, 2.0, 10.0)]
    out.append(check("ks_decreasing_0_2_10", float(min(ks[0] - ks[1], ks[1] - ks[2])), ">", 0.0))
    out.append(check("ks_at_z20", gt.scaled_ks_to_exponential(20.0), "<", 0.01))
    # exponential tail decay of the overshoot beyond k means
    ks_ = np.arange(1, 11)
    rates = []
    for zz in (-3.0, 0.0, 3.0):
        p = gt.tail_probability(zz, ks_ * gt.conditional_mean(zz))
        rates.append(-np.polyfit(ks_, np.log(p), 1)[0])
    out.append(check("tail_decay_fitted_rate", float(min(rates)), ">", 0.0))
    zn = np.arange(-6.0, 6.0 + 1e-9, 0.25)
    mn = gt.conditional_mean(zn)
    band = gt.tail_probability(zn, mn) - gt.tail_probability(zn, 1.5 * mn)
    out.append(check("mass_near_mean_floor", float(np.min(band)), ">", 0.05))
    lo, hi = math.inf, 0.0
    for zz in (-2.0, 0.0, 2.0, 6.0):
        r = gt.monotone_weight_ratio(zz, lambda x: -math.expm1(-x)) / gt.conditional_mean(zz)
        lo, hi = min(lo, r), max(hi, r)
    out.append(check("weight_ratio_over_mean_min", lo, ">=", _tol(tol, "c_lower", 0.1)))
    out.append(check("weight_ratio_over_mean_max", hi, "<=", _tol(tol, "c_upper", 20.0)))
    return out


def classical_fd_error(t, lam, rate) -> float:
    """Central-difference mismatch of the recorded rate.

    Stencils touching a zero rate are skipped (the rate jumps where the
    transported origin enters the support); the error is scaled by
    ``max(rate, 0.01 * peak rate)``.
    """
    fd = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])
    mid = rate[1:-1]
    ok = (rate[:-2] > 0) & (mid > 0) & (rate[2:] > 0)
    if not np.any(ok):
        return math.nan
    scale = np.maximum(mid[ok], 0.01 * np.max(rate))
    return float(np.max(np.abs(fd[ok] - mid[ok]) / scale))


def classical_checks(traj: Trajectory, beta: float | None = None, tol=None) -> list[Check]:
    lam = traj.array("Lambda")
    t = traj.array("t")
    rate = traj.array("dLambda_dt")
    out = [check("lambda_nondecreasing_min_step", float(np.min(np.diff(lam))), ">=", 0.0),
           check("fixed_point_residual", float(np.nanmax(traj.array("residual"))), "<", 1e-8)]
    out.append(check("rate_vs_differences", classical_fd_error(t, lam, rate), "<",
                     _tol(tol, "rate_fd", 1e-3)))
    if beta is not None:
        out.append(check("rate_vs_beta", float(np.max(np.abs(rate - beta)) / beta), "<",
                         _tol(tol, "rate_beta", 0.01)))
    return out


def _at_crossing(traj, ratio):
    """Rate at the first sample beyond ``ratio`` and the first KS sample from there on."""
    i = first_crossing(traj, ratio)
    if i is None:
        return math.nan, math.nan
    ks = traj.array("ks_exp")[i:]
    ks = ks[np.isfinite(ks)]
    return float(traj.array("dLambda_dt")[i]), float(ks[0]) if ks.size else math.nan


def wholeline_checks(traj: Trajectory, tol=None) -> list[Check]:
    from .wholeline import asymptotic_conditions

    lam = traj.array("Lambda")
    t = traj.array("t")
    rate = traj.array("dLambda_dt")
    out = [check("lambda_increasing_min_step", float(np.min(np.diff(lam))), ">", 0.0),
           check("fixed_point_residual", float(np.max(traj.array("residual"))), "<", 1e-8)]
    fd = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])
    rel = np.abs(fd - rate[1:-1]) / rate[1:-1]
    out.append(check("rate_vs_differences", float(np.max(rel[10:])), "<",
                     _tol(tol, "rate_fd", 1e-3)))
    ratio = _tol(tol, "late_ratio", 50.0)
    r, k = _at_crossing(traj, ratio)
    out.append(check("rate_at_ratio_lower", r, ">=", _tol(tol, "rate_lo", 0.9)))
    out.append(check("rate_at_ratio_upper", r, "<=", _tol(tol, "rate_hi", 1.1)))
    out.append(check("ks_at_ratio", k, "<", _tol(tol, "ks", 0.05)))
    try:
        cond = asymptotic_conditions(traj)
    except ValueError:
        return out
    for name, v in cond.rows():
        if isinstance(v, bool):
            out.append(check(name, float(v), ">=", 1.0))
    return out


def halfline_checks(traj: Trajectory, tol=None) -> list[Check]:
    lam = traj.array("Lambda")
    t = traj.array("t")
    rate = traj.array("dLambda_dt")
    st = traj.meta["state"]
    out = [check("lambda_increasing_min_step", float(np.min(np.diff(lam))), ">", 0.0)]
    b0 = traj.array("beta_at_0")
    out.append(check("beta_at_0_max_abs", float(np.nanmax(np.abs(b0))), "<=", 0.0))
    out.append(check("first_moment_defect", float(np.nanmax(traj.array("mass_error"))), "<",
                     _tol(tol, "mass", 1e-3)))
    fd = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])
    rel = np.abs(fd - rate[1:-1]) / np.maximum(rate[1:-1], 1e-300)
    smooth = lam[1:-1] > 2.0 * lam[0]
    if np.any(smooth):
        out.append(check("rate_vs_differences", float(np.max(rel[smooth])), "<",
                         _tol(tol, "rate_fd", 2e-3)))
    ratio = _tol(tol, "late_ratio", 50.0)
    r, k = _at_crossing(traj, ratio)
    out.append(check("rate_at_ratio_lower", r, ">=", _tol(tol, "rate_lo", 0.9)))
    out.append(check("rate_at_ratio_upper", r, "<=", _tol(tol, "rate_hi", 1.1)))
    out.append(check("ks_at_ratio", k, "<", _tol(tol, "ks", 0.05)))
    out.append(check("beta_window_deviation", beta_window_deviation(st, st.lam / 4.0), "<",
                     _tol(tol, "beta_window", 0.15)))
    return out


def bounds_checks(rep: BoundsReport, tol=None) -> list[Check]:
    out = [check("beta_ceiling", rep.beta_ceiling, "<", math.inf),
           check("rate_ceiling", rep.rate_ceiling, "<", math.inf),
           check("doubling_min", rep.doubling_min, ">=", _tol(tol, "doubling", 1.01))]
    if rep.lemma_ratio is not None:
        out.append(check("lemma_growth_ratio", rep.lemma_ratio, ">", 1.0))
    return out


def qlimit_checks(rep: QLimitReport, x_band=(0.5, 2.0), tol=None) -> list[Check]:
    sel = (rep.x >= x_band[0]) & (rep.x <= x_band[1])
    last = rep.q_over_2x[-1][sel]
    return [check("q_over_2x_min_at_largest_T", float(np.min(last)), ">=", _tol(tol, "q_lo", 0.8)),
            check("q_over_2x_max_at_largest_T", float(np.max(last)), "<=", _tol(tol, "q_hi", 1.2)),
            check("envelope_violation", rep.envelope_violation(), "<=", 0.0)]


def oracle_checks(eps: float = 0.1, k: float = 1.0, tol=None):
    """Constant-drift oracles; returns ``(checks, green_rows)``."""
    A = RateHistory.constant_rate(0.0, 1.0)
    g = dirichlet_green(A, eps, 1.0, 1.0)
    exact = const_drift_green(k, eps, g.grid, 1.0, 1.0)
    err = float(np.max(np.abs(g.values - exact)) / np.max(exact))
    out = [check("fd_vs_closed_form_green", err, "<", _tol(tol, "green", 1e-3))]
    xs = np.array([0.05, 0.1, 0.5])
    big = 200.0 * eps / k ** 2
    mass = exit_time_mass(k, eps, xs, big)
    out.append(check("exit_mass_limit", float(np.max(np.abs(mass - np.exp(-2 * k * xs / eps)))),
                     "<", _tol(tol, "exit_mass", 1e-4)))
    xq = np.linspace(0.05, 2.0, 40)
    q = q_const_drift(k, eps, xq, 20.0)
    out.append(check("q_const_drift_at_T20", float(np.max(np.abs(q / (2 * k * xq) - 1.0))), "<",
                     _tol(tol, "q_const", 0.1)))
    return out, list(zip(g.grid, g.values, exact))


def qcost_checks(x_values, T: float = 40.0, tol=None):
    """Exit cost at ``eps = 0`` by both routes.

    Returns ``(checks, constant_rows, history_rows)``: the constant drift
    ``-1`` against ``2x``, and the linear history ``Lambda = 1 + t`` with
    the lower and upper envelopes.  Characteristic values outside the
    covered patch are ``nan`` and excluded from the comparison.
    """
    drift = AffineDrift.constant(-1.0)
    const_rows, worst = [], 0.0
    for x in x_values:
        bf = q0_bruteforce(float(x), 1.0, T, drift)
        ch = q0_characteristics(float(x), 1.0, T, drift)
        exact = 2.0 * x
        worst = max(worst, abs(bf / exact - 1), abs(ch / exact - 1), abs(bf / ch - 1))
        const_rows.append((x, bf, ch, exact))
    t = np.linspace(0.0, T, 401)
    A = RateHistory(t, 1.0 + t)
    hist_rows, gap, viol = [], 0.0, -math.inf
    for x in x_values:
        bf = q0_bruteforce(float(x), 1.0, T, A)
        try:
            ch = q0_characteristics(float(x), 1.0, T, A)
            gap = max(gap, abs(bf / ch - 1))
        except CoverageError:
            ch = math.nan
        lo = float(lower_envelope(A, x, 1.0, T))
        hi = float(upper_envelope(A, x, 1.0, T))
        viol = max(viol, (lo - bf) / bf, (bf - hi) / bf)
        hist_rows.append((x, bf, ch, lo, hi))
    checks = [check("constant_drift_three_way_agreement", worst, "<", _tol(tol, "q0", 0.02)),
              check("history_bruteforce_vs_characteristics", gap, "<", _tol(tol, "q0", 0.02)),
              check("history_envelope_violation", viol, "<=", 0.0)]
    return checks, const_rows, hist_rows
