"""Half-line evolution with an absorbing origin.

The density solves

    c_t = d/dx[(1 - x/Lambda) c] + (eps/2) c_xx,    c(0, t) = 0,

with ``Lambda = int x c / int c``.  The first moment is conserved, so the
only way ``Lambda`` changes is through the mass leaving at the origin:
``dLambda/dt = F * X / M^2`` with ``F`` the outgoing boundary flux, ``X`` the
first moment and ``M`` the mass.

The scheme is a cell-centred finite-volume discretization on a graded grid
(spacing ``h0 + alpha*x``) with centred fluxes, Crank-Nicolson in time after
a few implicit Euler start-up steps, and a fixed point on the end-of-step
``Lambda``.  The same machinery gives the Dirichlet Green's function of the
linear problem along a frozen history, its ratio to the free kernel and the
survival weight ``u(y) = int G_D(x, y) dx``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ndtr

from . import _fv
from .classical import InitialTail
from .exitcost import ExitCostGrid, lower_envelope, solve_exit_cost, upper_envelope
from .kernels import AffineDrift, RateHistory, _piece, whole_line_green
from .measures import GridDensity, ks_exponential, tail_functions
from .trajectory import Trajectory, write_csv

__all__ = [
    "HalfLineError",
    "GridConfig",
    "HalfLineState",
    "ExitCost",
    "BoundsReport",
    "normalize_first_moment",
    "lemma_init",
    "evolve_halfline",
    "dirichlet_green",
    "ratio_K",
    "q_limit_check",
    "survival_weight",
    "doubling_ratios",
    "coarsening_bounds_check",
    "beta_window_deviation",
    "beta_profile_stats",
]

log = logging.getLogger(__name__)

#: relative survival mass below which beta is not reported
BETA_RESOLVED = 1e-8

TRAJECTORY_COLUMNS = (
    "t", "Lambda", "dLambda_dt", "ks_exp", "beta_sup_dev", "A", "m1",
    "m2_over_m1", "s2_over_m2", "s2_over_m1sq", "beta_at_0", "boundary_flux",
    "mass_error", "beta_sup", "min_density",
)


class HalfLineError(RuntimeError):
    """Solver failure: fixed point, negative density or conservation defect."""


@dataclass(frozen=True)
class GridConfig:
    """Discretization of the half-line solver.

    ``h0`` defaults to ``eps/10`` so the boundary layer is resolved.
    """

    h0: float | None = None
    alpha: float = 0.004
    dt_factor: float = 0.005
    x_max: float | None = None
    startup_steps: int = 4
    far_fraction: float = 0.7
    far_mass: float = 1e-10
    growth: float = 1.5
    fp_tol: float = 1e-12
    max_iter: int = 50
    mass_error_rate: float = 1e-4
    negative_tol: float = 1e-8

    def spacing(self, eps: float) -> float:
        return self.h0 if self.h0 is not None else eps / 10.0

    def refined(self, eps: float) -> "GridConfig":
        """Half the spacing everywhere and half the time step."""
        return replace(self, h0=self.spacing(eps) / 2.0, alpha=self.alpha / 2.0,
                       dt_factor=self.dt_factor / 2.0)


@dataclass
class HalfLineState:
    density: GridDensity
    eps: float
    rate_history: RateHistory
    current_time: float
    mass_error: float

    @property
    def lam(self) -> float:
        return float(self.rate_history.lambda_values[-1])


def normalize_first_moment(d: GridDensity) -> GridDensity:
    """Rescale the values (not the grid) so that ``int x c = 1``."""
    w, h = d.exact_w, d.exact_h
    x = d.grid
    if w is not None:
        first = float(h[0] + x[0] * w[0])
    else:
        dx = np.diff(x)
        c = d.values
        first = float(np.sum(dx / 6.0 * (2 * x[:-1] * c[:-1] + x[:-1] * c[1:]
                                         + x[1:] * c[:-1] + 2 * x[1:] * c[1:])))
    if not first > 0:
        raise ValueError("zero first moment")
    f = 1.0 / first
    return GridDensity(x, d.values * f, d.truncation_mass * f,
                       None if w is None else w * f, None if h is None else h * f)


def lemma_init(f: Callable | None = None) -> InitialTail:
    """Law proportional to ``f(x) exp(-x)`` with unit first moment.

    The default ``f(x) = 1 - exp(-x)`` has closed-form tails.
    """
    if f is None:
        def ev(x):
            x = np.asarray(x, dtype=float)
            e1, e2 = np.exp(-x), np.exp(-2.0 * x)
            k = 4.0 / 3.0
            return k * (e1 - 0.5 * e2), k * (e1 - 0.25 * e2), k * (e1 - e2)
        return InitialTail(ev)
    from scipy import integrate

    first, _ = integrate.quad(lambda s: s * f(s) * math.exp(-s), 0, math.inf)

    def ev(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        w = np.array([integrate.quad(lambda s: f(s) * math.exp(-s), xi, math.inf)[0] for xi in x])
        h = np.array([integrate.quad(lambda s: (s - xi) * f(s) * math.exp(-s), xi, math.inf)[0]
                      for xi in x])
        c = np.array([f(xi) * math.exp(-xi) for xi in x])
        return w / first, h / first, c / first
    return InitialTail(ev)


def _as_tail(init) -> InitialTail:
    if isinstance(init, InitialTail):
        return init
    if isinstance(init, GridDensity):
        return InitialTail.from_density(init)
    raise TypeError("init must be a GridDensity or InitialTail")


def _velocity(mesh: _fv.Mesh, lam: float):
    return -1.0 + mesh.faces / lam


def _snapshot(mesh: _fv.Mesh, c) -> GridDensity:
    return GridDensity(mesh.x, np.maximum(c, 0.0))


def beta_profile_stats(d: GridDensity, lam: float, g_frac: float = 0.25,
                       resolved: float = BETA_RESOLVED):
    """``(beta(0), sup beta, sup_{x > g} |beta - 1|)`` over the resolved range, ``g = g_frac*lam``."""
    prof = tail_functions(d)
    ok = prof.w > resolved * prof.w[0]
    beta = prof.beta[ok]
    x = prof.x[ok]
    win = x > g_frac * lam
    dev = float(np.max(np.abs(beta[win] - 1.0))) if np.any(win) else math.nan
    return float(prof.beta[0]), float(np.max(beta)), dev


def evolve_halfline(init, eps: float, t_end: float = math.inf,
                    grid: GridConfig = GridConfig(), *, stop_ratio: float | None = None,
                    record_every: int = 10, snapshot_times=()) -> Trajectory:
    """Evolve the half-line problem until ``t_end`` or ``Lambda/Lambda(0) >= stop_ratio``.

    Parameters
    ----------
    init : GridDensity or InitialTail
        Initial law with unit first moment; sampled by exact cell averages.
    grid : GridConfig
        Spacing, time-step factor and domain control.
    record_every : int
        Distributional diagnostics are computed every this many steps (and
        at the last one); ``Lambda`` and the rate are recorded every step.

    Returns
    -------
    Trajectory
        Columns as in :data:`TRAJECTORY_COLUMNS`; ``meta["state"]`` holds the
        final :class:`HalfLineState`.

    Raises
    ------
    HalfLineError
        On fixed-point failure, negative density beyond tolerance or a
        conservation defect beyond the configured bound.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not (t_end > 0) or (math.isinf(t_end) and stop_ratio is None):
        raise ValueError("need a finite t_end or a stop_ratio")
    tail = _as_tail(init)
    w0, first, _ = (float(v) for v in tail.evaluate(0.0))
    if abs(first - 1.0) > 1e-6:
        raise ValueError(f"init must have unit first moment, got {first:.9g}")
    lam0_exact = first / w0
    h0 = grid.spacing(eps)
    x_max = grid.x_max
    if x_max is None:
        end = tail.support_end if math.isfinite(tail.support_end) else 0.0
        x_max = end + 40.0 * lam0_exact + 10.0 * math.sqrt(eps)
    mesh = _fv.Mesh(_fv.graded_nodes(0.0, x_max, h0, grid.alpha))
    c = _fv.cell_averages(lambda z: tail.evaluate(z)[0], mesh)
    c[0] = 0.0
    c /= mesh.moment(c)
    D = 0.5 * eps
    M, X = mesh.mass(c), mesh.moment(c)
    lam = X / M
    lam0 = lam
    t = 0.0
    m1, m2, s2 = 1.0, 0.0, 0.0
    traj = Trajectory(meta={"kind": "halfline", "eps": eps})
    snaps = sorted(float(s) for s in snapshot_times)
    times, lams = [0.0], [lam]

    def diagnostics(cn, a, b, M, X, rate):
        d = _snapshot(mesh, cn)
        b0, bsup, bdev = beta_profile_stats(d, lam)
        s2m2 = s2 / m2 if m2 > 0 else math.nan
        return dict(
            ks_exp=ks_exponential(d), beta_sup_dev=bdev, A=1.0 / lam, m1=m1,
            m2_over_m1=m2 / m1, s2_over_m2=s2m2, s2_over_m1sq=s2 / (m1 * m1),
            beta_at_0=b0,
            boundary_flux=_fv.boundary_flux(a, b, cn), mass_error=abs(X - 1.0),
            beta_sup=bsup, min_density=float(np.min(cn[1:]) / np.max(cn)),
        )

    a, b = _fv.flux_coefficients(mesh, _velocity(mesh, lam), D)
    rate0 = _fv.boundary_flux(a, b, c) * X / (M * M)
    traj.record(0.0, lam, rate0, **diagnostics(c, a, b, M, X, rate0))
    step = 0
    mass_error = 0.0
    while True:
        if t >= t_end * (1 - 1e-14) or (stop_ratio is not None and lam >= stop_ratio * lam0):
            break
        dt = min(grid.dt_factor * lam, t_end - t)
        theta = 1.0 if step < grid.startup_steps else 0.5
        if len(times) > 1:
            guess = lam + dt * (lam - lams[-2]) / (times[-1] - times[-2])
        else:
            guess = lam
        for _ in range(grid.max_iter):
            lm = 0.5 * (lam + guess)
            a, b = _fv.flux_coefficients(mesh, _velocity(mesh, lm), D)
            cn = _fv.theta_step(mesh, c, a, b, a, b, dt, theta)
            M, X = mesh.mass(cn), mesh.moment(cn)
            new = X / M
            if abs(new - guess) <= grid.fp_tol * new:
                guess = new
                break
            guess = new
        else:
            raise HalfLineError(f"Lambda fixed point failed at t={t:.6g}")
        if not guess > lam:
            log.warning("Lambda not increasing at t=%g", t + dt)
        ia, e1, e2 = _piece(lam, guess, dt)
        g = math.exp(float(ia))
        m1, m2, s2 = m1 * g, m2 * g + float(e1), s2 * g * g + float(e2)
        c, lam, t = cn, guess, t + dt
        step += 1
        times.append(t)
        lams.append(lam)
        cmin = float(np.min(c[1:]))
        if cmin < -grid.negative_tol * float(np.max(c)):
            raise HalfLineError(f"negative density {cmin:.3g} at t={t:.6g}")
        mass_error = abs(X - 1.0)
        if mass_error > grid.mass_error_rate * max(t, 1.0):
            raise HalfLineError(f"first-moment defect {mass_error:.3g} at t={t:.6g}")
        a, b = _fv.flux_coefficients(mesh, _velocity(mesh, lam), D)
        rate = _fv.boundary_flux(a, b, c) * X / (M * M)
        last = t >= t_end * (1 - 1e-14) or (stop_ratio is not None and lam >= stop_ratio * lam0)
        if step % record_every == 0 or last:
            traj.record(t, lam, rate, **diagnostics(c, a, b, M, X, rate))
        else:
            traj.record(t, lam, rate)
        while snaps and snaps[0] <= t + 1e-12:
            snaps.pop(0)
            traj.snapshot(t, _snapshot(mesh, c))
        far = mesh.x > grid.far_fraction * mesh.x[-1]
        if float(np.dot(mesh.volumes[far], c[far])) > grid.far_mass * M:
            nodes = _fv.extend_nodes(mesh.x, grid.growth * mesh.x[-1], h0, grid.alpha)
            log.debug("extending grid to x=%g at t=%g", nodes[-1], t)
            cc = np.zeros(nodes.size)
            cc[:c.size] = c
            mesh, c = _fv.Mesh(nodes), cc
    history = RateHistory(np.array(times), np.array(lams))
    traj.meta["state"] = HalfLineState(_snapshot(mesh, c), eps, history, t, mass_error)
    traj.meta["steps"] = step
    traj.meta["nodes"] = mesh.x.size
    return traj


def _history(src) -> RateHistory:
    if isinstance(src, RateHistory):
        return src
    if isinstance(src, Trajectory):
        st = src.meta.get("state")
        return st.rate_history if st is not None else src.history()
    raise TypeError("expected Trajectory or RateHistory")


GREEN_GRID = GridConfig(h0=None, alpha=0.001)


def dirichlet_green(traj, eps: float, y: float, T: float, grid: GridConfig | None = None,
                    *, kappa: float = 0.01, dt_max: float = 0.005,
                    x_right: float | None = None) -> GridDensity:
    """Green's function ``x -> G_D(x, y, 0, T)`` of the linear problem along a frozen history.

    The point source is replaced by the free kernel at the short time
    ``t0 = (3 h_y)^2/eps``, ``h_y`` the local spacing at ``y``, so the source
    is about three cells wide.  Absorption before ``t0`` is neglected, which
    requires ``y`` to be at least ten source widths from the origin.

    Raises
    ------
    ValueError
        If ``y`` is too close to the origin or ``T`` is not after ``t0``.
    """
    A = _history(traj)
    if grid is None:
        grid = replace(GREEN_GRID, h0=eps / 40.0)
    h0 = grid.spacing(eps)
    hy = h0 + grid.alpha * y
    width = 3.0 * hy
    if not y > 10.0 * width:
        raise ValueError(f"y={y} too close to 0 for a source of width {width:.3g}")
    t0 = A.t_start + width * width / eps
    if not T > t0:
        raise ValueError("T must exceed the source time")
    if x_right is None:
        ts = np.linspace(A.t_start, T, 201)[1:]
        m1, m2, s2 = A.moments_from_start(ts)
        x_right = float(np.max(m1 * y - m2 + 12.0 * np.sqrt(eps * s2))) + y + 1.0
    mesh = _fv.Mesh(_fv.graded_nodes(0.0, x_right, h0, grid.alpha))
    m1, m2, s2 = A.interval_moments(A.t_start, t0)
    mu, sd = m1 * y - m2, math.sqrt(eps * s2)
    c = _fv.cell_averages(lambda z: ndtr((mu - z) / sd), mesh)
    c[0] = 0.0
    D = 0.5 * eps
    levels = _fv.log_grid_steps(t0, T, kappa, dt_max)
    for k, (ta, tb) in enumerate(zip(levels[:-1], levels[1:])):
        theta = 1.0 if k < grid.startup_steps else 0.5
        lam_mid = float(A.lam(0.5 * (ta + tb)))
        a, b = _fv.flux_coefficients(mesh, _velocity(mesh, lam_mid), D)
        c = _fv.theta_step(mesh, c, a, b, a, b, tb - ta, theta)
    return GridDensity(mesh.x, np.maximum(c, 0.0))


@dataclass
class ExitCost:
    """Samples of ``K = G_D/G`` and ``q = -eps log(1 - K)`` at fixed ``(y, T)``.

    ``mask`` marks samples where the free kernel is too small to resolve ``K``.
    """

    x: np.ndarray
    y: float
    T: float
    K: np.ndarray
    q: np.ndarray
    mask: np.ndarray = field(default=None)

    @property
    def q_over_2x(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.x > 0, self.q / (2.0 * self.x), np.nan)

    def to_csv(self, path=None) -> str:
        n = self.x.size
        rows = zip(self.x, [self.y] * n, [self.T] * n, self.K, self.q, self.q_over_2x)
        return write_csv(["x", "y", "T", "K", "q", "q_over_2x"], rows, path)


K_CEILING = 1.0 - 1e-15


def ratio_K(gd: GridDensity, gw, eps: float, y: float, T: float,
            floor: float = 1e-8) -> ExitCost:
    """Ratio of the Dirichlet to the free Green's function on a common grid.

    Samples where ``gw < floor * max(gw)`` are masked (``nan``).
    """
    gw = np.asarray(gw, dtype=float)
    if gw.shape != gd.grid.shape:
        raise ValueError("gd and gw must share the grid")
    ok = gw > floor * float(np.max(gw))
    K = np.where(ok, gd.values / np.where(ok, gw, 1.0), np.nan)
    K = np.clip(K, 0.0, K_CEILING)
    q = -eps * np.log1p(-K)
    return ExitCost(gd.grid.copy(), float(y), float(T), K, q, ~ok)


def doubling_ratios(src):
    """``(T, Lambda(T + Lambda(T))/Lambda(T))`` for every sampled ``T`` with ``T + Lambda(T)`` in range."""
    A = _history(src)
    t = A.times
    lam = A.lambda_values
    ok = t + lam <= A.t_end
    if not np.any(ok):
        raise ValueError("history too short to evaluate T + Lambda(T)")
    return t[ok], A.lam(t[ok] + lam[ok]) / lam[ok]


@dataclass
class QLimitReport:
    x: np.ndarray
    horizons: np.ndarray
    q: np.ndarray           # (horizon, x)
    lower: np.ndarray
    upper: np.ndarray
    doubling_min: float

    @property
    def q_over_2x(self):
        return self.q / (2.0 * self.x[None, :])

    def envelope_violation(self, rtol: float = 0.0) -> float:
        """Largest excursion of ``q`` outside the envelopes, relative to ``q``."""
        lo = (self.lower - self.q) / self.q
        hi = (self.q - self.upper) / self.q
        return float(max(np.max(lo), np.max(hi)))


def q_limit_check(traj, eps: float, y: float, x_window, horizons=None, *,
                  s0: float | None = None, grid: ExitCostGrid = ExitCostGrid()) -> QLimitReport:
    """Exit cost along a half-line history over a ladder of horizons.

    The cost solves the ``v = exp(-q/eps)`` equation with the affine drift of
    the history, started at a short time ``s0`` from the small-time value
    ``q = 2 m1 x y / sigma^2``.  The doubling property of the history is
    checked first.

    Raises
    ------
    ValueError
        If the history does not double or ``q`` is unresolved on the window.
    """
    A = _history(traj)
    _, ratios = doubling_ratios(A)
    dmin = float(np.min(ratios))
    if not dmin > 1.0:
        raise ValueError("history lacks the doubling property")
    x = np.asarray(x_window, dtype=float)
    if horizons is None:
        horizons = A.t_end * np.array([0.125, 0.25, 0.5, 1.0])
    horizons = np.asarray(horizons, dtype=float)
    if s0 is None:
        s0 = min(0.02, 0.01 * float(horizons[0]))
    drift = AffineDrift.from_history(A, y)
    m1, _, s2 = A.interval_moments(A.t_start, A.t_start + s0)
    k0 = 2.0 * m1 * y / s2

    def v_start(z):
        return np.exp(-k0 * z / eps)

    qs, lo, hi = [], [], []
    for T in horizons:
        q = solve_exit_cost(drift, eps, float(T), x, s_start=A.t_start + s0,
                            v_start=v_start, x_right=float(np.max(x)) + T + 10.0, grid=grid)
        if np.any(~np.isfinite(q)):
            raise ValueError(f"exit cost unresolved on the window at T={T}")
        qs.append(q)
        lo.append(lower_envelope(A, x, y, float(T)))
        hi.append(upper_envelope(A, x, y, float(T)))
    return QLimitReport(x, horizons, np.array(qs), np.array(lo), np.array(hi), dmin)


def survival_weight(traj, eps: float, y, T: float, *, h0: float | None = None,
                    alpha: float = 0.001, kappa: float = 0.01, dt_max: float = 0.01,
                    levels: int = 3):
    """``u(y, 0, T) = int G_D(x, y, 0, T) dx`` from the backward equation.

    In reversed time ``r = T - t`` the weight solves
    ``u_r = (A(T - r) y - 1) u_y + (eps/2) u_yy`` with ``u = 0`` at the origin
    and ``u = 1`` initially; exponentially fitted implicit Euler keeps
    ``0 <= u <= 1``.  ``levels`` runs with steps halved each time are
    combined by Richardson extrapolation (first-order error terms, up to
    three levels).
    """
    A = _history(traj)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("y must be positive")
    span = T - A.t_start
    if not span > 0:
        raise ValueError("T must be after the history start")
    h = h0 if h0 is not None else eps / 40.0
    right = float(np.max(y)) + span + 10.0 * math.sqrt(eps * span) + 2.0
    nodes = _fv.graded_nodes(0.0, right, h, alpha)
    D = 0.5 * eps

    def run(kap, dtm):
        r0 = min(1e-4, 1e-3 * span) * (dtm / dt_max)
        levels = np.concatenate(([0.0], _fv.log_grid_steps(r0, span, kap, dtm)))
        u = np.ones(nodes.size)
        u[0] = 0.0
        for ra, rb in zip(levels[:-1], levels[1:]):
            a = float(A.rate(T - rb))
            u = _fv.fitted_backward_step(nodes, u, a * nodes - 1.0, D, rb - ra, 0.0, 1.0)
        return np.interp(y, nodes, u)

    if levels not in (1, 2, 3):
        raise ValueError("levels must be 1, 2 or 3")
    runs = [run(kappa / 2 ** k, dt_max / 2 ** k) for k in range(levels)]
    if levels == 1:
        u = runs[0]
    elif levels == 2:
        u = 2.0 * runs[1] - runs[0]
    else:
        u = (8.0 * runs[2] - 6.0 * runs[1] + runs[0]) / 3.0
    return np.clip(u, 0.0, 1.0)


@dataclass
class BoundsReport:
    t0: float
    beta_ceiling: float
    rate_ceiling: float
    doubling_min: float
    lemma_ratio: float | None = None

    def rows(self):
        out = [("beta_ceiling", self.beta_ceiling), ("rate_ceiling", self.rate_ceiling),
               ("doubling_min", self.doubling_min)]
        if self.lemma_ratio is not None:
            out.append(("lemma_ratio", self.lemma_ratio))
        return out


def coarsening_bounds_check(traj: Trajectory, t0: float | None = None, *,
                            lemma_eps: float | None = None,
                            grid: GridConfig = GridConfig()) -> BoundsReport:
    """Bounds on beta, on the rate and on the growth over one ``Lambda``.

    ``t0`` defaults to the first time ``Lambda`` doubles.  With ``lemma_eps``
    the report also carries ``Lambda(1)/Lambda(0)`` for :func:`lemma_init`.
    """
    t = traj.array("t")
    lam = traj.array("Lambda")
    if t0 is None:
        above = np.nonzero(lam >= 2.0 * lam[0])[0]
        if above.size == 0:
            raise ValueError("trajectory too short: Lambda never doubles")
        t0 = float(t[above[0]])
    late = t >= t0
    beta = traj.array("beta_sup")[late]
    beta = beta[np.isfinite(beta)]
    if beta.size == 0:
        raise ValueError("no beta samples after t0")
    rate = traj.array("dLambda_dt")[late]
    _, ratios = doubling_ratios(traj)
    lemma = None
    if lemma_eps is not None:
        run = evolve_halfline(lemma_init(), lemma_eps, 1.0, grid, record_every=10 ** 9)
        lemma = run.lam[-1] / run.lam[0]
    return BoundsReport(t0, float(np.max(beta)), float(np.max(rate)),
                        float(np.min(ratios)), lemma)


def beta_window_deviation(state: HalfLineState, g: float,
                          resolved: float = BETA_RESOLVED) -> float:
    """``sup |beta(x) - 1|`` over ``g < x`` where the survival mass is resolved.

    Raises
    ------
    ValueError
        If the window is empty.
    """
    prof = tail_functions(state.density)
    ok = (prof.x > g) & (prof.w > resolved * prof.w[0])
    if not np.any(ok):
        raise ValueError("empty window")
    return float(np.max(np.abs(prof.beta[ok] - 1.0)))
