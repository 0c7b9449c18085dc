"""Exit-cost oracles.

The exit cost ``q`` of reaching ``x`` at time ``T`` from the absorbing
origin solves, through ``v = exp(-q/eps)``,

    v_T = -lambda(x, T) v_x + (eps/2) v_xx,    v(0, T) = 1.

For constant drift ``lambda = -k`` the Dirichlet kernel and the exit-time law
are explicit.  At ``eps = 0`` the cost is the minimal action

    q0(x, T) = min over tau, paths  (1/2) int_tau^T (x' - lambda(x, s))^2 ds

with ``x(tau) = 0``, ``x(T) = x`` and ``x > 0`` in between.  For a drift that
is affine in ``x`` the action of a piecewise-linear path is a quadratic form
in its knots, which makes the restricted minimum a bounded least-squares
problem.  Characteristics of the associated Hamilton-Jacobi equation give an
independent route.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.special import log_ndtr

from ._fv import fitted_backward_step, graded_nodes, log_grid_steps
from .kernels import AffineDrift, RateHistory

__all__ = [
    "CoverageError",
    "PathDiscretization",
    "const_drift_green",
    "exit_time_mass",
    "exit_time_density",
    "exit_mass_tail_bound",
    "survival_limit",
    "solve_exit_cost",
    "q_const_drift",
    "action",
    "q0_bruteforce",
    "char_endpoint",
    "q0_characteristics",
    "lower_envelope",
    "upper_envelope",
    "g2_growth_margin",
]


class CoverageError(RuntimeError):
    """The target point is not reached monotonically by boundary characteristics."""


def _pos(name, v):
    v = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError(f"{name} must be positive and finite")
    return v


def const_drift_green(k: float, eps: float, x, xp, t):
    """Dirichlet kernel on the half line for drift ``-k`` and diffusion ``eps/2``.

    Free Gaussian times the image factor ``1 - exp(-2 x x'/(eps t))``.
    """
    _pos("k", k)
    _pos("eps", eps)
    t = _pos("t", t)
    x = np.asarray(x, dtype=float)
    xp = _pos("x'", xp)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    et = eps * t
    free = np.exp(-(x - xp + k * t) ** 2 / (2.0 * et)) / np.sqrt(2.0 * np.pi * et)
    return free * -np.expm1(-2.0 * x * xp / et)


def exit_time_density(k: float, eps: float, x, t):
    """Exit-time density ``x/sqrt(2 pi eps t^3) exp(-(x + k t)^2/(2 eps t))``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return x / np.sqrt(2.0 * np.pi * eps * t ** 3) * np.exp(-(x + k * t) ** 2 / (2.0 * eps * t))


def exit_time_mass(k: float, eps: float, x, T=math.inf):
    """Probability of exiting through the origin before ``T``.

    Equals ``exp(-2 k x/eps)`` at ``T = inf``; finite horizons use the
    inverse-Gaussian distribution function.
    """
    _pos("k", k)
    _pos("eps", eps)
    x = _pos("x", x)
    if math.isinf(T):
        return np.exp(-2.0 * k * x / eps)
    T = float(_pos("T", T))
    s = math.sqrt(eps * T)
    return (np.exp(log_ndtr(-(x + k * T) / s))
            + np.exp(-2.0 * k * x / eps + log_ndtr((k * T - x) / s)))


def exit_mass_tail_bound(k: float, eps: float, x, T: float):
    """Upper bound on the exit probability after ``T``."""
    x = np.asarray(x, dtype=float)
    return math.sqrt(2.0 * eps / math.pi) * x / (k * k * T ** 1.5) * math.exp(-k * k * T / (2.0 * eps))


def survival_limit(k: float, eps: float, x):
    """Probability of never exiting, ``1 - exp(-2 k x/eps)``."""
    return -np.expm1(-2.0 * k * _pos("x", x) / eps)


@dataclass(frozen=True)
class ExitCostGrid:
    h0: float | None = None
    alpha: float = 0.01
    kappa: float = 0.01
    dt_max: float = 0.01
    richardson: bool = True


def _solve_v(drift: AffineDrift, eps, s_start, s_end, v_start, x_right, grid, x_eval):
    h0 = grid.h0 if grid.h0 is not None else eps / 20.0
    nodes = graded_nodes(0.0, x_right, h0, grid.alpha)
    D = 0.5 * eps

    def run(kappa, dt_max):
        ts = log_grid_steps(s_start, s_end, kappa, dt_max) if s_start > 0 else \
            np.linspace(0.0, s_end, int(math.ceil(s_end / dt_max)) + 1)
        v = v_start(nodes)
        v[0] = 1.0
        v_right = v[-1]
        for t_new, t_old in zip(ts[1:], ts[:-1]):
            a, b = drift.coefficients(t_new)
            lam = a * nodes + b
            # v_s = -lambda v_x + D v_xx
            v = fitted_backward_step(nodes, v, -lam, D, t_new - t_old, 1.0, v_right)
        return v

    v1 = run(grid.kappa, grid.dt_max)
    with np.errstate(divide="ignore"):
        q1 = -eps * np.log(np.interp(x_eval, nodes, v1))
        if not grid.richardson:
            return q1
        v2 = run(grid.kappa / 2.0, grid.dt_max / 2.0)
        q2 = -eps * np.log(np.interp(x_eval, nodes, v2))
    return 2.0 * q2 - q1


def solve_exit_cost(drift: AffineDrift, eps: float, T: float, x_eval, *,
                    s_start: float = 0.0, v_start: Callable | None = None,
                    x_right: float | None = None, grid: ExitCostGrid = ExitCostGrid()):
    """Exit cost ``q(x, T) = -eps log v`` from the fitted implicit solve of the ``v`` equation.

    Implicit Euler with exponential fitting keeps ``v`` positive; two step
    sizes are combined by Richardson extrapolation in ``q``.  Values with
    ``v`` below ``1e-300`` are returned as ``nan``.
    """
    x_eval = np.asarray(x_eval, dtype=float)
    if v_start is None:
        raise ValueError("initial profile required")
    if x_right is None:
        x_right = float(np.max(x_eval)) + 10.0
    q = _solve_v(drift, eps, s_start, T, v_start, x_right, grid, x_eval)
    with np.errstate(invalid="ignore"):
        under = ~np.isfinite(q) | (q > -eps * math.log(1e-300))
    return np.where(under, np.nan, q)


def q_const_drift(k: float, eps: float, x, T: float,
                  q0: Callable = lambda x: 10.0 * x * x,
                  grid: ExitCostGrid = ExitCostGrid()):
    """Exit cost for constant drift ``-k`` from the initial cost profile ``q0``."""
    _pos("k", k)
    _pos("eps", eps)
    x = _pos("x", x)
    T = float(_pos("T", T))
    x_right = float(np.max(x)) + k * T + 10.0 * math.sqrt(eps * T) + 2.0

    def v0(z):
        return np.exp(-q0(z) / eps)

    return solve_exit_cost(AffineDrift.constant(-k), eps, T, x, s_start=0.0,
                           v_start=v0, x_right=x_right, grid=grid)


@dataclass(frozen=True)
class PathDiscretization:
    """Piecewise-linear path on uniform times in ``[tau, T]``.

    ``knots`` includes both endpoints; the first must be 0 and the interior
    strictly positive.
    """

    tau: float
    T: float
    knots: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=float)
        if not (0 < self.tau < self.T):
            raise ValueError("need 0 < tau < T")
        if k.size < 2 or k[0] != 0.0 or np.any(k[1:-1] <= 0):
            raise ValueError("path must start at 0 and stay positive")
        object.__setattr__(self, "knots", k)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.tau, self.T, self.knots.size)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _as_drift(A, y):
    if isinstance(A, AffineDrift):
        return A
    if isinstance(A, RateHistory):
        return AffineDrift.from_history(A, y)
    raise TypeError("expected RateHistory or AffineDrift")


def _action_system(drift: AffineDrift, tau, T, n_knots, x_end):
    """Residual ``M z + r`` of the interior knots ``z`` at the quadrature nodes."""
    nseg = n_knots - 1
    ts = np.linspace(tau, T, n_knots)
    dt = ts[1] - ts[0]
    theta = 0.5 * (_GL_X + 1.0)
    s = (ts[:-1, None] + dt * theta[None, :]).ravel()
    wq = np.sqrt(np.tile(0.5 * dt * _GL_W, nseg))
    a, b = drift.coefficients(s)
    seg = np.repeat(np.arange(nseg), theta.size)
    th = np.tile(theta, nseg)
    # coefficient on knot j and knot j+1 of the residual x' - a x - b
    left = -1.0 / dt - a * (1.0 - th)
    right = 1.0 / dt - a * th
    full = np.zeros((s.size, n_knots))
    rows = np.arange(s.size)
    full[rows, seg] = left
    full[rows, seg + 1] = right
    const = -b + full[:, -1] * x_end
    M = full[:, 1:-1] * wq[:, None]
    return M, const * wq


def action(path: PathDiscretization, A, y: float = 1.0) -> float:
    """Action ``(1/2) int (x' - lambda)^2 ds`` of a piecewise-linear path.

    Each segment is integrated by 8-point Gauss-Legendre, exact whenever the
    drift coefficients are polynomial of low degree along the segment.
    """
    drift = _as_drift(A, y)
    k = path.knots
    M, r = _action_system(drift, path.tau, path.T, k.size, k[-1])
    res = M @ k[1:-1] + r
    return 0.5 * float(res @ res)


def _restricted_min(drift, tau, T, n_knots, x):
    M, r = _action_system(drift, tau, T, n_knots, x)
    if M.shape[1] == 0:
        return 0.5 * float(r @ r)
    sol = optimize.lsq_linear(M, -r, bounds=(0.0, np.inf), method="bvls",
                              tol=1e-14, lsmr_tol="auto")
    res = M @ sol.x + r
    return 0.5 * float(res @ res)


def q0_bruteforce(x: float, y: float, T: float, A, knots: int = 33,
                  tau_grid: int = 48, tau_min_frac: float = 1e-3,
                  refine: bool = True) -> float:
    """Upper estimate of the minimal action over discretized exit paths.

    For each exit time on a grid the knots are optimized exactly (bounded
    linear least squares); the best exit time is then refined by a bounded
    scalar search.  Nested knot counts give nonincreasing values.
    """
    if knots < 16 or tau_grid < 32:
        raise ValueError("resolution below minimum (knots >= 16, tau grid >= 32)")
    _pos("x", x)
    _pos("T", T)
    drift = _as_drift(A, y)
    tau_min = T * tau_min_frac
    dur = np.geomspace(T - tau_min, T * 1e-3, tau_grid)
    taus = T - dur

    def f(tau):
        return _restricted_min(drift, float(tau), T, knots, x)

    vals = np.array([f(t) for t in taus])
    i = int(np.argmin(vals))
    best = float(vals[i])
    if refine:
        lo = taus[max(i - 1, 0)]
        hi = taus[min(i + 1, taus.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10 * T})
            best = min(best, float(res.fun))
    return best


def _panels(t0, t1, n_panels=24):
    """Gauss-Legendre nodes on geometrically graded panels of ``[t0, t1]``."""
    span = t1 - t0
    edges = t0 + span * np.concatenate(([0.0], np.geomspace(1e-6, 1.0, n_panels)))
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_X[None, :]
    weights = half[:, None] * _GL_W[None, :]
    return nodes.ravel(), weights.ravel()


def _log_growth(drift: AffineDrift, s):
    """``G`` with ``exp(G(s) - G(r)) = exp(int_r^s slope)``."""
    s = np.asarray(s, dtype=float)
    if drift.history is None:
        return drift.const_slope * s
    m1, _, s2 = drift.history.moments_from_start(s)
    return np.log(s2 / m1)


def char_endpoint(drift: AffineDrift, tau: float, T: float):
    """Characteristic from the origin at ``tau``: returns ``(x(T), p(T), action)``.

    Along it ``p' = -slope*p`` with ``p(tau) = -2 offset(tau)``, ``x' = lambda + p``
    and the cost grows at rate ``p^2/2``.
    """
    if not (0 < tau < T):
        raise ValueError("need 0 < tau < T")
    _, b_tau = drift.coefficients(tau)
    p_tau = -2.0 * float(b_tau)
    s, w = _panels(tau, T)
    g_s = _log_growth(drift, s)
    g_t = float(_log_growth(drift, tau))
    g_T = float(_log_growth(drift, T))
    _, b = drift.coefficients(s)
    p = p_tau * np.exp(g_t - g_s)
    x_T = float(np.sum(w * np.exp(g_T - g_s) * (b + p)))
    cost = float(np.sum(w * 0.5 * p * p))
    return x_T, p_tau * math.exp(g_t - g_T), cost


def q0_characteristics(x: float, y: float, T: float, A, tau_min_frac: float = 1e-3,
                       n_scan: int = 64, n_gauss: int = 24) -> float:
    """Exit cost at ``eps = 0`` by shooting boundary characteristics.

    The gradient ``dq/dx`` equals the terminal co-state of the characteristic
    through ``(x', T)``; it is integrated over ``x' in (0, x)``.

    Raises
    ------
    CoverageError
        If the endpoint map is not monotone on the scanned exit times or does
        not reach ``x``.
    """
    _pos("x", x)
    _pos("T", T)
    drift = _as_drift(A, y)
    tau_min = T * tau_min_frac
    taus = T - np.geomspace(T - tau_min, T * 1e-9, n_scan)
    ends = np.array([char_endpoint(drift, t, T)[0] for t in taus])
    if ends[0] < x:
        raise CoverageError(f"characteristics reach only x={ends[0]:.6g} < {x}")
    # only the exit times landing in [0, x] need a one-to-one endpoint map
    i0 = int(np.nonzero(ends >= x)[0][-1])
    if np.any(np.diff(ends[i0:]) >= 0):
        raise CoverageError("endpoint map not monotone in exit time")
    nodes, weights = np.polynomial.legendre.leggauss(n_gauss)
    xs = 0.5 * x * (nodes + 1.0)
    total = 0.0
    for xi, wi in zip(xs, weights):
        j = int(np.searchsorted(-ends, -xi))
        lo, hi = taus[j - 1], taus[j]
        tau = optimize.brentq(lambda t: char_endpoint(drift, t, T)[0] - xi, lo, hi,
                              xtol=1e-14 * T, rtol=1e-15, maxiter=200)
        total += wi * char_endpoint(drift, tau, T)[1]
    return 0.5 * x * total


def lower_envelope(A: RateHistory, x, y: float, T: float):
    """Lower bound ``2 m1 x y / sigma^2`` on the exit cost."""
    m1, _, s2 = A.interval_moments(0.0, T)
    return 2.0 * m1 * np.asarray(x, dtype=float) * y / s2


def upper_envelope(A: RateHistory, x, y: float, T: float):
    """Upper bound ``-2 lambda(0, y, T) x`` on the exit cost."""
    _, b = AffineDrift.from_history(A, y).coefficients(T)
    return -2.0 * float(b) * np.asarray(x, dtype=float)


def g2_growth_margin(A: RateHistory, T: float, s: float) -> float:
    """``exp(2 int_T^s A) g2(T) - g2(s)``; nonnegative once ``sigma^2 >= 2 m2``."""
    from .kernels import g2_diagonal

    m1, _, _ = A.interval_moments(T, s)
    return float(m1 * m1 * g2_diagonal(A, T) - g2_diagonal(A, s))
