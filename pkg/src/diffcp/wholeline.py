"""Whole-line evolution by the Gaussian kernel representation.

Without a boundary the density at time ``T`` is the initial law pushed
through a Gaussian kernel: a source at ``y`` lands at
``N(m1*y - m2, eps*sigma2)`` with the kernel moments of ``A = 1/Lambda``.
``Lambda`` is the mean of the part of the law on ``x > 0``, so every time
step solves the scalar fixed point ``Lambda(T) = J(T)/I(T)`` with

    I = int P(X_y > 0) c0(y) dy,     J = int E[X_y; X_y > 0] c0(y) dy.

Both integrands are closed forms in the normal tail, and the ``y``
integral is Gauss-Legendre quadrature on the cells of the initial grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import log_ndtr, logsumexp, ndtr

from .gaussian_tails import conditional_mean
from .kernels import RateHistory, _piece
from .measures import GridDensity
from .trajectory import Trajectory

__all__ = [
    "WholeLineError",
    "InitQuadrature",
    "WholeLineState",
    "mass_integrals",
    "evolve_wholeline",
    "coarsening_rate_wholeline",
    "positive_part_profile",
    "ks_positive_part",
    "asymptotic_conditions",
    "log_rate_check",
    "beta_deviation_wholeline",
    "small_delta_integrals",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

TRAJECTORY_COLUMNS = (
    "t", "Lambda", "dLambda_dt", "ks_exp", "beta_sup_dev", "A", "m1",
    "m2_over_m1", "s2_over_m2", "s2_over_m1sq",
)


class WholeLineError(RuntimeError):
    """Fixed-point or quadrature failure."""


@dataclass(frozen=True)
class InitQuadrature:
    """Nodes ``y`` and weights approximating ``int f(y) c0(y) dy``."""

    y: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if y.ndim != 1 or y.shape != w.shape or y.size == 0:
            raise ValueError("nodes and weights must be 1-d of equal length")
        if np.any(y <= 0) or np.any(w < 0) or not np.sum(w) > 0:
            raise ValueError("need positive nodes and nonnegative weights")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_density(cls, d: GridDensity, nodes_per_cell: int | None = None) -> "InitQuadrature":
        """Gauss-Legendre on every cell of the piecewise-linear interpolant.

        Cells with zero density at both ends are skipped; the default order
        gives at least 64 nodes in total and 4 per cell.
        """
        x, c = d.grid, d.values
        live = (c[:-1] > 0) | (c[1:] > 0)
        n = nodes_per_cell or max(4, math.ceil(64 / max(int(np.sum(live)), 1)))
        g, gw = np.polynomial.legendre.leggauss(n)
        th = 0.5 * (g + 1.0)
        xl, xr = x[:-1][live], x[1:][live]
        cl, cr = c[:-1][live], c[1:][live]
        dx = xr - xl
        y = (xl[:, None] + dx[:, None] * th[None, :]).ravel()
        dens = (cl[:, None] + (cr - cl)[:, None] * th[None, :]).ravel()
        w = (0.5 * dx[:, None] * gw[None, :]).ravel() * dens
        keep = y > 0
        return cls(y[keep], w[keep])

    @classmethod
    def uniform(cls, a: float, b: float, n: int = 64) -> "InitQuadrature":
        """Uniform law on ``[a, b]`` with unit first moment, ``n`` Gauss-Legendre nodes."""
        if not (0 <= a < b):
            raise ValueError("need 0 <= a < b")
        g, gw = np.polynomial.legendre.leggauss(n)
        mass = 2.0 / (b * b - a * a)
        return cls(a + 0.5 * (b - a) * (g + 1.0), 0.5 * (b - a) * mass * gw)

    @classmethod
    def point(cls, y: float, mass: float = 1.0) -> "InitQuadrature":
        return cls(np.array([float(y)]), np.array([float(mass)]))

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def first_moment(self) -> float:
        return float(np.dot(self.weights, self.y))


def _quad(init) -> InitQuadrature:
    if isinstance(init, InitQuadrature):
        return init
    if isinstance(init, GridDensity):
        return InitQuadrature.from_density(init)
    raise TypeError("init must be a GridDensity or InitQuadrature")


def _IJ(q: InitQuadrature, eps, m1, m2, s2):
    if s2 <= 0:
        return q.mass, q.first_moment
    s = math.sqrt(eps * s2)
    u = (m2 - m1 * q.y) / s
    tail = ndtr(-u)
    I = float(np.dot(q.weights, tail))
    J = s * float(np.dot(q.weights, tail * conditional_mean(u)))
    return I, J


def mass_integrals(A: RateHistory, eps: float, init, T: float):
    """``(I, J)``: mass and first moment on ``x > 0`` at time ``T``.

    At ``T = A.t_start`` these are the mass and first moment of ``init``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    m1, m2, s2 = A.interval_moments(A.t_start, T)
    return _IJ(_quad(init), eps, m1, m2, s2)


@dataclass
class WholeLineState:
    init: InitQuadrature
    eps: float
    rate_history: RateHistory
    current_time: float

    def kernel_moments(self):
        A = self.rate_history
        return A.interval_moments(A.t_start, self.current_time)

    @property
    def lam(self) -> float:
        return float(self.rate_history.lam(self.current_time))


def _rate(q: InitQuadrature, eps, m1, m2, s2, lam):
    s = math.sqrt(eps * s2)
    u = (m2 - m1 * q.y) / s
    phi = np.exp(-0.5 * u * u - _LOG_SQRT_2PI)
    c0 = float(np.dot(q.weights, phi)) / s
    cx = float(np.dot(q.weights, -u * phi)) / (s * s)
    I = float(np.dot(q.weights, ndtr(-u)))
    return lam * (c0 + 0.5 * eps * (cx + c0 / lam)) / I


def coarsening_rate_wholeline(state: WholeLineState) -> float:
    """``dLambda/dt`` from the density and its slope at the origin.

    Raises ``WholeLineError`` at ``t = 0`` (no diffusion has acted yet).
    """
    m1, m2, s2 = state.kernel_moments()
    if not s2 > 0:
        raise WholeLineError("degenerate state: zero kernel variance")
    return _rate(state.init, state.eps, m1, m2, s2, state.lam)


def positive_part_profile(q: InitQuadrature, eps, m1, m2, s2, x):
    """Log of ``(w, h, c)`` on ``x >= 0``, unnormalized.

    ``w`` is the survival mass beyond ``x``, ``h`` its integral and ``c``
    the density; all are sums of Gaussian terms evaluated in log space.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = math.sqrt(eps * s2)
    mu = m1 * q.y - m2
    d = (x[:, None] - mu[None, :]) / s
    lw = np.log(q.weights)[None, :]
    log_tail = log_ndtr(-d)
    log_w = logsumexp(log_tail + lw, axis=1)
    log_h = logsumexp(log_tail + np.log(conditional_mean(d)) + lw, axis=1) + math.log(s)
    log_c = logsumexp(-0.5 * d * d + lw, axis=1) - _LOG_SQRT_2PI - math.log(s)
    return log_w, log_h, log_c


def ks_positive_part(q: InitQuadrature, eps, m1, m2, s2, n: int = 3001) -> float:
    """Kolmogorov distance of ``X/<X>`` (positive part) to a unit exponential."""
    log_w0, log_h0, _ = positive_part_profile(q, eps, m1, m2, s2, 0.0)
    mean = math.exp(log_h0[0] - log_w0[0])

    def gap(u):
        lw, _, _ = positive_part_profile(q, eps, m1, m2, s2, np.asarray(u) * mean)
        return np.exp(lw - log_w0[0]) - np.exp(-np.asarray(u))

    u = np.linspace(0.0, 40.0, n)
    g = np.abs(gap(u))
    i = int(np.argmax(g))
    best = float(g[i])
    lo, hi = u[max(i - 1, 0)], u[min(i + 1, n - 1)]
    res = optimize.minimize_scalar(lambda s: -abs(float(gap(s)[0])), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-12})
    return max(best, -float(res.fun))


def _beta_dev(q, eps, m1, m2, s2, window: float, n: int = 501) -> float:
    log_w0, log_h0, _ = positive_part_profile(q, eps, m1, m2, s2, 0.0)
    mean = math.exp(log_h0[0] - log_w0[0])
    x = np.linspace(0.0, window * mean, n)
    lw, lh, lc = positive_part_profile(q, eps, m1, m2, s2, x)
    return float(np.max(np.abs(np.exp(lc + lh - 2.0 * lw) - 1.0)))


def beta_deviation_wholeline(state: WholeLineState, window: float = 5.0) -> float:
    """``sup |beta(x) - 1|`` over ``0 <= x <= window * <X>`` (positive part)."""
    m1, m2, s2 = state.kernel_moments()
    if not s2 > 0:
        raise WholeLineError("degenerate state: zero kernel variance")
    return _beta_dev(state.init, state.eps, m1, m2, s2, window)


def evolve_wholeline(init, eps: float, t_end: float = math.inf, dt: float | None = None, *,
                     dt_factor: float = 0.01, stop_ratio: float | None = None,
                     tol: float = 1e-13, max_iter: int = 60, record_every: int = 10,
                     beta_window: float = 5.0) -> Trajectory:
    """Evolve until ``t_end`` or ``Lambda/Lambda(0) >= stop_ratio``.

    The step is ``dt`` if given, otherwise ``dt_factor * Lambda``.  Each
    step extrapolates ``Lambda`` linearly and iterates ``Lambda <- J/I`` with
    the kernel moments of the trial step, to relative tolerance ``tol``.
    Distributional diagnostics are computed every ``record_every`` steps.

    Returns
    -------
    Trajectory
        Columns :data:`TRAJECTORY_COLUMNS` plus ``residual``; ``meta["state"]``
        holds the final :class:`WholeLineState`.

    Raises
    ------
    WholeLineError
        If the fixed point does not converge.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not (t_end > 0) or (math.isinf(t_end) and stop_ratio is None):
        raise ValueError("need a finite t_end or a stop_ratio")
    q = _quad(init)
    I, J = q.mass, q.first_moment
    lam = J / I
    lam0 = lam
    t = 0.0
    m1, m2, s2 = 1.0, 0.0, 0.0
    times, lams = [0.0], [lam]
    traj = Trajectory(meta={"kind": "wholeline", "eps": eps})

    def columns(full):
        out = dict(A=1.0 / lam, m1=m1, m2_over_m1=m2 / m1,
                   s2_over_m2=s2 / m2 if m2 > 0 else math.nan,
                   s2_over_m1sq=s2 / (m1 * m1))
        if full and s2 > 0:
            out["ks_exp"] = ks_positive_part(q, eps, m1, m2, s2)
            out["beta_sup_dev"] = _beta_dev(q, eps, m1, m2, s2, beta_window)
        return out

    # the rate at t = 0 needs the initial density at the origin, which the
    # quadrature does not carry
    traj.record(0.0, lam, math.nan, residual=0.0, **columns(False))
    step = 0
    while True:
        if t >= t_end * (1 - 1e-14) or (stop_ratio is not None and lam >= stop_ratio * lam0):
            break
        h = min(dt if dt is not None else dt_factor * lam, t_end - t)
        if len(times) > 1:
            guess = lam + h * (lam - lams[-2]) / (times[-1] - times[-2])
        else:
            guess = lam + h
        for _ in range(max_iter):
            ia, e1, e2 = _piece(lam, guess, h)
            g = math.exp(float(ia))
            n1, n2, ns2 = m1 * g, m2 * g + float(e1), s2 * g * g + float(e2)
            I, J = _IJ(q, eps, n1, n2, ns2)
            new = J / I
            if abs(new - guess) <= tol * new:
                guess = new
                break
            guess = new
        else:
            raise WholeLineError(f"fixed point failed at t={t:.6g}")
        ia, e1, e2 = _piece(lam, guess, h)
        g = math.exp(float(ia))
        m1, m2, s2 = m1 * g, m2 * g + float(e1), s2 * g * g + float(e2)
        I, J = _IJ(q, eps, m1, m2, s2)
        lam, t = guess, t + h
        step += 1
        times.append(t)
        lams.append(lam)
        rate = _rate(q, eps, m1, m2, s2, lam)
        last = t >= t_end * (1 - 1e-14) or (stop_ratio is not None and lam >= stop_ratio * lam0)
        full = step % record_every == 0 or last
        traj.record(t, lam, rate, residual=abs(lam - J / I) / lam, **columns(full))
    history = RateHistory(np.array(times), np.array(lams))
    traj.meta["state"] = WholeLineState(q, eps, history, t)
    traj.meta["steps"] = step
    return traj


def _finite_tail(traj: Trajectory, name: str):
    a = traj.array(name)
    ok = np.isfinite(a)
    return traj.array("Lambda")[ok], a[ok]


@dataclass
class ConditionReport:
    """Trend verdicts for the kernel-moment conditions along a run."""

    A_decreasing: bool
    m1_increasing: bool
    m2_over_m1_increasing: bool
    s2_over_m2_increasing: bool
    s2_over_m2_growth: float
    s2_over_m1sq_increasing: bool
    s2_over_m1sq_final: float
    s2_over_m1sq_late_change: float
    bounded_tol: float = 0.01

    @property
    def s2_over_m1sq_bounded(self) -> bool:
        return math.isfinite(self.s2_over_m1sq_final) and self.s2_over_m1sq_late_change < self.bounded_tol

    @property
    def all_pass(self) -> bool:
        return (self.A_decreasing and self.m1_increasing and self.m2_over_m1_increasing
                and self.s2_over_m2_increasing and self.s2_over_m1sq_bounded)

    def rows(self):
        return [
            ("A_decreasing", self.A_decreasing),
            ("m1_increasing", self.m1_increasing),
            ("m2_over_m1_increasing", self.m2_over_m1_increasing),
            ("s2_over_m2_increasing", self.s2_over_m2_increasing),
            ("s2_over_m2_growth", self.s2_over_m2_growth),
            ("s2_over_m1sq_increasing", self.s2_over_m1sq_increasing),
            ("s2_over_m1sq_final", self.s2_over_m1sq_final),
            ("s2_over_m1sq_late_change", self.s2_over_m1sq_late_change),
            ("s2_over_m1sq_bounded", self.s2_over_m1sq_bounded),
        ]


def asymptotic_conditions(traj: Trajectory, bounded_tol: float = 0.01) -> ConditionReport:
    """Monotone trends of ``A``, ``m1``, ``m2/m1``, ``sigma2/m2`` and ``sigma2/m1^2``.

    ``sigma2/m1^2`` counts as bounded when its relative change over the
    last doubling of ``Lambda`` is below ``bounded_tol``.

    Raises ``ValueError`` when ``Lambda`` grows by less than a factor 10.
    """
    lam = traj.array("Lambda")
    if lam[-1] < 10.0 * lam[0]:
        raise ValueError("trajectory too short: Lambda must grow tenfold")

    def incr(name, sign=1.0):
        _, a = _finite_tail(traj, name)
        a = a[1:] if name != "A" else a
        return bool(np.all(sign * np.diff(a) > 0))

    _, r = _finite_tail(traj, "s2_over_m2")
    lam_e, e = _finite_tail(traj, "s2_over_m1sq")
    half = e[lam_e <= 0.5 * lam_e[-1]]
    late = abs(e[-1] - half[-1]) / e[-1] if half.size else math.inf
    return ConditionReport(
        A_decreasing=incr("A", -1.0), m1_increasing=incr("m1"),
        m2_over_m1_increasing=incr("m2_over_m1"), s2_over_m2_increasing=incr("s2_over_m2"),
        s2_over_m2_growth=float(r[-1] / r[0]), s2_over_m1sq_increasing=incr("s2_over_m1sq"),
        s2_over_m1sq_final=float(e[-1]), s2_over_m1sq_late_change=float(late),
        bounded_tol=bounded_tol)


@dataclass
class LogRateReport:
    t: np.ndarray
    deviation: np.ndarray     # Lambda/T - (1 - 1/(2 log T)), nan where log T <= 1
    an2_ratio: np.ndarray     # Lambda m2 / (eps sigma2)
    decade_start: float
    decade_end: float

    @property
    def shrinking(self) -> bool:
        return abs(self.decade_end) < abs(self.decade_start)


def log_rate_check(traj: Trajectory, eps: float | None = None) -> LogRateReport:
    """Deviation of ``Lambda(T)/T`` from ``1 - 1/(2 log T)`` over the run.

    ``decade_start``/``decade_end`` are the deviations at ``T_end/10`` and
    ``T_end``.  Report only: the comparison is heuristic.

    Raises ``ValueError`` if ``Lambda`` grows by less than a factor 100 or
    the final decade reaches below ``log T = 1``.
    """
    eps = eps if eps is not None else traj.meta.get("eps")
    if eps is None:
        raise ValueError("eps unknown")
    t = traj.array("t")
    lam = traj.array("Lambda")
    if lam[-1] < 100.0 * lam[0]:
        raise ValueError("trajectory too short: Lambda must grow a hundredfold")
    if math.log(t[-1] / 10.0) <= 1.0:
        raise ValueError("final decade starts below log T = 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.log(t)
        dev = np.where(logt > 1.0, lam / t - (1.0 - 0.5 / logt), np.nan)
        m1 = traj.array("m1")
        m2 = traj.array("m2_over_m1") * m1
        s2 = traj.array("s2_over_m1sq") * m1 * m1
        an2 = np.where(s2 > 0, lam * m2 / (eps * s2), np.nan)
    ok = np.isfinite(dev)
    start = float(np.interp(t[-1] / 10.0, t[ok], dev[ok]))
    return LogRateReport(t, dev, an2, start, float(dev[-1]))


def small_delta_integrals(delta: float):
    """``int_0^inf z^k exp(-z - delta z^2/2) dz`` for ``k = 0, 1`` by quadrature."""
    f0, _ = integrate.quad(lambda z: math.exp(-z - 0.5 * delta * z * z), 0, math.inf)
    f1, _ = integrate.quad(lambda z: z * math.exp(-z - 0.5 * delta * z * z), 0, math.inf)
    return f0, f1
