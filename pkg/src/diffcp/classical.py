"""Zero-diffusion Carr-Penrose evolution by tail transport.

With ``eps = 0`` the survival mass is carried along characteristics,
``w(x, t) = w0(F(x, t))`` with ``F(x, t) = (x + m2(t))/m1(t)``, and the
integrated tail obeys ``h(x, t) = m1(t) h0(F(x, t))``.  The scale
``Lambda(t) = h(0, t)/w(0, t)`` then depends on its own history through the
kernel moments, so each time step solves a scalar fixed point.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .kernels import RateHistory, _piece
from .measures import GridDensity, _cell_tails, selfsimilar_tails
from .trajectory import Trajectory

__all__ = [
    "ClassicalError",
    "InitialTail",
    "ClassicalState",
    "transport_map",
    "evolve_classical",
    "coarsening_rate_classical",
]

log = logging.getLogger(__name__)

MASS_FLOOR = 1e-14


class ClassicalError(RuntimeError):
    """Fixed-point failure or exhausted tail mass."""


@dataclass(frozen=True)
class InitialTail:
    """Initial law as callables ``x -> (w0, h0, c0)`` on ``x >= 0``."""

    evaluate: Callable
    support_end: float = math.inf

    @classmethod
    def selfsimilar(cls, beta: float) -> "InitialTail":
        end = 1.0 / (1.0 - beta) if beta < 1 else math.inf
        return cls(lambda x: selfsimilar_tails(beta, x), end)

    @classmethod
    def uniform(cls, a: float, b: float) -> "InitialTail":
        """Uniform law on ``[a, b]`` with unit first moment, closed-form tails."""
        if not (0 <= a < b):
            raise ValueError("need 0 <= a < b")
        mass = 2.0 / (b * b - a * a)

        def ev(x):
            x = np.asarray(x, dtype=float)
            lo = np.clip(x, a, b)
            h = np.where(x < a, mass * (b - a) * (0.5 * (a + b) - x), 0.5 * mass * (b - lo) ** 2)
            return mass * (b - lo), h, np.where((x >= a) & (x <= b), mass, 0.0)
        return cls(ev, float(b))

    @classmethod
    def from_density(cls, d: GridDensity) -> "InitialTail":
        """Exact tails of the piecewise-linear interpolant, or Hermite
        interpolation of attached analytic tails."""
        xs, c = d.grid, d.values
        w, h = _cell_tails(d)
        end = float(xs[-1])
        if d.exact_w is not None:
            wi = CubicHermiteSpline(xs, w, -c)
            hi = CubicHermiteSpline(xs, h, -w)

            def ev(x):
                x = np.asarray(x, dtype=float)
                inside = x <= end
                xc = np.clip(x, xs[0], end)
                cx = np.interp(xc, xs, c)
                return (np.where(inside, np.maximum(wi(xc), 0.0), 0.0),
                        np.where(inside, np.maximum(hi(xc), 0.0), 0.0),
                        np.where(inside, cx, 0.0))
            return cls(ev, end)

        def ev(x):
            x = np.asarray(x, dtype=float)
            inside = x <= end
            xc = np.clip(x, xs[0], end)
            i = np.clip(np.searchsorted(xs, xc, side="right") - 1, 0, xs.size - 2)
            xl, xr = xs[i], xs[i + 1]
            cl, cr = c[i], c[i + 1]
            cx = cl + (cr - cl) * (xc - xl) / (xr - xl)
            s = xr - xc
            wx = w[i + 1] + 0.5 * s * (cx + cr)
            hx = h[i + 1] + s * w[i + 1] + s * s * (cx / 6.0 + cr / 3.0)
            return (np.where(inside, wx, 0.0), np.where(inside, hx, 0.0),
                    np.where(inside, cx, 0.0))
        return cls(ev, end)

    def beta(self, x):
        w, h, c = self.evaluate(x)
        return c * h / (w * w)


@dataclass
class ClassicalState:
    tail: InitialTail
    rate_history: RateHistory
    current_time: float


def transport_map(A: RateHistory, x, t: float):
    """``F_A(x, t) = (x + m2(t))/m1(t)``; increasing in ``x``, identity at ``t = 0``."""
    m1, m2, _ = A.moments_from_start(t)
    return (np.asarray(x, dtype=float) + m2) / m1


def _lam_from(tail: InitialTail, m1: float, m2: float):
    alpha = m2 / m1
    w, h, c = tail.evaluate(alpha)
    w, h, c = float(w), float(h), float(c)
    return m1 * h / w if w > 0 else math.nan, alpha, w, h, c


def coarsening_rate_classical(state: ClassicalState) -> float:
    """``beta`` of the current law at the origin, which is ``dLambda/dt``."""
    m1, m2, _ = state.rate_history.moments_from_start(state.current_time)
    _, alpha, w, h, c = _lam_from(state.tail, float(m1), float(m2))
    w0 = float(state.tail.evaluate(0.0)[0])
    if not w > MASS_FLOOR * w0:
        raise ClassicalError("tail exhausted")
    return c * h / (w * w)


def _ks_transported(tail: InitialTail, m1, m2, lam, w_now, n=2000):
    u = np.linspace(0.0, 30.0, n)
    w = tail.evaluate((u * lam + m2) / m1)[0] / w_now
    return float(np.max(np.abs(w - np.exp(-u))))


def evolve_classical(init, t_end: float, dt: float | None = None, *,
                     tail: InitialTail | None = None, tol: float = 1e-10,
                     max_iter: int = 20, record_every: int = 1,
                     snapshot_times=(), snapshot_grid=None) -> Trajectory:
    """Evolve the zero-diffusion model to ``t_end``.

    Parameters
    ----------
    init : GridDensity or InitialTail
        Initial law; a density is interpolated exactly (piecewise linear).
    dt : float, optional
        Step size, default ``1e-3 * Lambda(0)``; halved on fixed-point failure.
    tail : InitialTail, optional
        Analytic tails overriding the interpolation of ``init``.

    Returns
    -------
    Trajectory
        Columns ``beta_at_0``, ``ks_exp`` and ``residual`` besides
        ``Lambda`` and ``dLambda_dt``.

    Raises
    ------
    ClassicalError
        On fixed-point failure below the minimal step or on tail exhaustion.
    """
    if tail is None:
        tail = init if isinstance(init, InitialTail) else InitialTail.from_density(init)
    w_init, h_init, _ = (float(v) for v in tail.evaluate(0.0))
    lam = h_init / w_init
    if dt is None:
        dt = 1e-3 * lam
    if not (dt > 0 and t_end > 0):
        raise ValueError("dt and t_end must be positive")
    m1, m2 = 1.0, 0.0
    t = 0.0
    traj = Trajectory(meta={"kind": "classical"})
    snaps = sorted(float(s) for s in snapshot_times)

    def diag(m1, m2, lam):
        _, alpha, w, h, c = _lam_from(tail, m1, m2)
        rate = c * h / (w * w)
        return rate, _ks_transported(tail, m1, m2, lam, w), abs(lam - m1 * h / w) / lam

    rate, ks, res = diag(m1, m2, lam)
    traj.record(t, lam, rate, beta_at_0=rate, ks_exp=ks, residual=res)
    prev = None
    step = 0
    while t < t_end * (1 - 1e-14):
        h = min(dt, t_end - t)
        while True:
            guess = lam + h * (lam - prev[1]) / (t - prev[0]) if prev else lam
            ok = False
            for _ in range(max_iter):
                ia, e1, _ = _piece(lam, guess, h)
                g = math.exp(float(ia))
                n1, n2 = m1 * g, m2 * g + float(e1)
                new, alpha, w, _, _ = _lam_from(tail, n1, n2)
                if not (w > MASS_FLOOR * w_init):
                    raise ClassicalError(f"tail exhausted at t={t + h:.6g}")
                if abs(new - guess) <= tol * new:
                    guess = new
                    ok = True
                    break
                guess = 0.5 * guess + 0.5 * new if abs(new - guess) > 0.1 * new else new
            if ok:
                break
            h *= 0.5
            log.debug("fixed point failed; halving step to %g", h)
            if h < 1e-12 * max(1.0, t_end):
                raise ClassicalError("fixed point did not converge")
        prev = (t, lam)
        t += h
        # recompute moments for the accepted value
        ia, e1, _ = _piece(lam, guess, h)
        g = math.exp(float(ia))
        m1, m2 = m1 * g, m2 * g + float(e1)
        lam = guess
        step += 1
        if step % record_every == 0 or t >= t_end * (1 - 1e-14):
            rate, ks, res = diag(m1, m2, lam)
            traj.record(t, lam, rate, beta_at_0=rate, ks_exp=ks, residual=res)
        while snaps and snaps[0] <= t + 1e-12:
            snaps.pop(0)
            if snapshot_grid is not None:
                traj.snapshot(t, _density_at(tail, snapshot_grid, m1, m2))
    traj.meta["m1"] = m1
    traj.meta["m2"] = m2
    return traj


def _density_at(tail: InitialTail, grid, m1, m2) -> GridDensity:
    x = np.asarray(grid, dtype=float)
    w, h, c = tail.evaluate((x + m2) / m1)
    return GridDensity(x, c / m1, 0.0, w, m1 * h)
