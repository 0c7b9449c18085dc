"""Distributional diagnostics on sampled densities.

A :class:`GridDensity` is read as the piecewise-linear interpolant of its
samples.  Under that reading the survival mass ``w``, the integrated tail
``h`` and the first moment are exact cell sums, so ``w(0)`` equals the total
mass and ``h(0)`` equals the first moment up to rounding.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

__all__ = [
    "DensityError",
    "TailExhaustedError",
    "GridDensity",
    "TailProfile",
    "W_THRESHOLD",
    "tail_functions",
    "residual_mean",
    "selfsimilar_init",
    "selfsimilar_tails",
    "uniform_init",
    "ks_exponential",
    "mean",
    "total_mass",
    "first_moment",
]

W_THRESHOLD = 1e-12


class DensityError(ValueError):
    """Invalid density samples."""


class TailExhaustedError(ValueError):
    """The survival mass is below the reporting threshold."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density samples on an increasing grid.

    ``exact_w`` and ``exact_h`` optionally carry analytic tail functions
    sampled on the same grid; when present they replace the cumulative
    quadrature (used for densities with integrable singularities).
    """

    grid: np.ndarray
    values: np.ndarray
    truncation_mass: float = 0.0
    exact_w: Optional[np.ndarray] = None
    exact_h: Optional[np.ndarray] = None

    def __post_init__(self):
        x = _frozen(self.grid)
        c = _frozen(self.values)
        if x.ndim != 1 or x.shape != c.shape or x.size < 2:
            raise DensityError("grid and values must be 1-d with equal length >= 2")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(c))):
            raise DensityError("non-finite samples")
        if x[0] < 0 or np.any(np.diff(x) <= 0):
            raise DensityError("grid must be nonnegative and strictly increasing")
        if np.any(c < 0):
            raise DensityError("negative density samples")
        if not (self.truncation_mass >= 0):
            raise DensityError("truncation_mass must be nonnegative")
        object.__setattr__(self, "grid", x)
        object.__setattr__(self, "values", c)
        for name in ("exact_w", "exact_h"):
            v = getattr(self, name)
            if v is not None:
                v = _frozen(v)
                if v.shape != x.shape:
                    raise DensityError(f"{name} must match the grid")
                object.__setattr__(self, name, v)
        if (self.exact_w is None) != (self.exact_h is None):
            raise DensityError("exact_w and exact_h must be given together")
        if total_mass(self) <= 0:
            raise DensityError("density has zero mass")

    def scaled(self, factor: float) -> "GridDensity":
        """Law of ``factor * X``: grid stretched, values divided by ``factor``."""
        f = float(factor)
        if not f > 0:
            raise ValueError("factor must be positive")
        ew = None if self.exact_w is None else self.exact_w
        eh = None if self.exact_h is None else self.exact_h * f
        return GridDensity(self.grid * f, self.values / f, self.truncation_mass, ew, eh)


def _cell_tails(d: GridDensity):
    """Exact ``w`` and ``h`` of the piecewise-linear interpolant at the nodes."""
    if d.exact_w is not None:
        return np.array(d.exact_w), np.array(d.exact_h)
    x, c = d.grid, d.values
    dx = np.diff(x)
    cell_mass = 0.5 * dx * (c[:-1] + c[1:])
    w = np.zeros_like(x)
    w[:-1] = np.cumsum(cell_mass[::-1])[::-1]
    # int over a cell of w = dx*w_right + dx^2*(c_left/6 + c_right/3)
    cell_h = dx * w[1:] + dx * dx * (c[:-1] / 6.0 + c[1:] / 3.0)
    h = np.zeros_like(x)
    h[:-1] = np.cumsum(cell_h[::-1])[::-1]
    return w, h


def total_mass(d: GridDensity) -> float:
    if d.exact_w is not None:
        return float(d.exact_w[0])
    return float(np.sum(0.5 * np.diff(d.grid) * (d.values[:-1] + d.values[1:])))


def first_moment(d: GridDensity) -> float:
    """``int x c dx`` over the grid (``h(0)`` plus ``x0 * w(0)`` for offset grids)."""
    if d.exact_h is not None:
        return float(d.exact_h[0] + d.grid[0] * d.exact_w[0])
    x, c = d.grid, d.values
    dx = np.diff(x)
    return float(np.sum(dx / 6.0 * (2 * x[:-1] * c[:-1] + x[:-1] * c[1:]
                                    + x[1:] * c[:-1] + 2 * x[1:] * c[1:])))


def mean(d: GridDensity) -> float:
    """``int x c / int c``.

    Raises ``DensityError`` for zero mass.
    """
    m = total_mass(d)
    if m <= 0:
        raise DensityError("zero total mass")
    return first_moment(d) / m


@dataclass(frozen=True)
class TailProfile:
    """Tail functions sampled on the density grid.

    ``beta`` is ``nan`` where ``w <= W_THRESHOLD * w(0)``.
    """

    x: np.ndarray
    w: np.ndarray
    h: np.ndarray
    beta: np.ndarray

    @property
    def resolved(self) -> np.ndarray:
        return np.isfinite(self.beta)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x", "w", "h", "beta"])
        for row in zip(self.x, self.w, self.h, self.beta):
            wr.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else format(float(v), ".17g")


def tail_functions(d: GridDensity) -> TailProfile:
    """Survival mass ``w``, integrated tail ``h`` and beta profile ``c h / w^2``.

    Raises ``DensityError`` for an all-zero density.
    """
    w, h = _cell_tails(d)
    if not w[0] > 0:
        raise DensityError("all-zero density")
    ok = w > W_THRESHOLD * w[0]
    wsafe = np.where(ok, w, 1.0)
    beta = np.where(ok, d.values * h / (wsafe * wsafe), np.nan)
    return TailProfile(d.grid, w, h, beta)


def _tails_at(d: GridDensity, x: float):
    xs, c = d.grid, d.values
    if x < xs[0] or x > xs[-1]:
        raise ValueError("position outside the grid")
    w, h = _cell_tails(d)
    i = min(int(np.searchsorted(xs, x, side="right")) - 1, xs.size - 2)
    if x == xs[i]:
        return w[i], h[i]
    if d.exact_w is not None:
        raise ValueError("off-node evaluation needs sampled tails at the node")
    # on [x, xr] the density is linear between cx and cr
    xr = xs[i + 1]
    s = xr - x
    cx = c[i] + (c[i + 1] - c[i]) * (x - xs[i]) / (xr - xs[i])
    wx = w[i + 1] + 0.5 * s * (cx + c[i + 1])
    hx = h[i + 1] + s * w[i + 1] + s * s * (cx / 6.0 + c[i + 1] / 3.0)
    return wx, hx


def residual_mean(d: GridDensity, x: float) -> float:
    """``E[X - x | X > x] = h(x)/w(x)``.

    Raises ``TailExhaustedError`` if ``w(x)`` is below the reporting threshold.
    """
    wx, hx = _tails_at(d, float(x))
    if not wx > W_THRESHOLD * total_mass(d):
        raise TailExhaustedError(f"tail exhausted at x={x}")
    return hx / wx


def selfsimilar_tails(beta: float, x):
    """Survival ``w``, integrated tail ``h`` and density of the unit-mean law with constant beta."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    if beta == 1.0:
        e = np.exp(-x)
        return e, e, e
    r = 1.0 - beta
    base = 1.0 - r * x
    inside = base > 0
    b = np.where(inside, base, 1.0)
    w = np.where(inside, b ** (beta / r), 0.0)
    h = np.where(inside, b ** (1.0 / r), 0.0)
    with np.errstate(divide="ignore"):
        c = np.where(inside, beta * b ** ((2.0 * beta - 1.0) / r), 0.0)
    return w, h, c


def selfsimilar_init(beta: float, grid) -> GridDensity:
    """Member of the constant-beta family with unit mean, sampled on ``grid``.

    Support is ``[0, 1/(1-beta)]`` for ``beta < 1`` and the half line
    otherwise.  A singular density value at the support end is replaced by
    the finite cell average of the last cell; exact tails are attached.
    """
    if not (np.isfinite(beta) and beta > 0):
        raise ValueError("beta must be positive")
    x = np.asarray(grid, dtype=float)
    w, h, c = selfsimilar_tails(beta, x)
    if beta < 1.0:
        end = 1.0 / (1.0 - beta)
        if x[-1] < end:
            raise ValueError("grid does not cover the support")
        bad = ~np.isfinite(c)
        if np.any(bad):
            i = int(np.argmax(bad))
            c[i] = (w[i - 1] - w[i]) / (x[i] - x[i - 1])
    trunc = float(w[-1])
    return GridDensity(x, c, trunc, w, h)


def uniform_init(a: float, b: float, grid) -> GridDensity:
    """Uniform law on ``[a, b]`` with unit first moment, exact tails attached."""
    if not (0 <= a < b):
        raise ValueError("need 0 <= a < b")
    x = np.asarray(grid, dtype=float)
    mass = 2.0 / (b * b - a * a)
    c = np.where((x >= a) & (x <= b), mass, 0.0)
    lo = np.clip(x, a, b)
    w = mass * (b - lo)
    h = np.where(x < a, mass * (b - a) * (0.5 * (a + b) - x), 0.5 * mass * (b - lo) ** 2)
    return GridDensity(x, c, 0.0, w, h)


def ks_exponential(d: GridDensity) -> float:
    """Kolmogorov distance between the law of ``X/<X>`` and ``Exp(1)``.

    Raises ``DensityError`` for zero mean.
    """
    mu = mean(d)
    if not mu > 0:
        raise DensityError("zero mean")
    w, _ = _cell_tails(d)
    mass = w[0]
    u = d.grid / mu
    gap = w / mass - np.exp(-u)
    best = float(np.max(np.abs(gap)))
    if d.exact_w is not None:
        return best
    # interior of cells: survival is quadratic, locate local extrema
    c = d.values / mass * mu
    i = int(np.argmax(np.abs(gap)))
    cand = [best]
    for j in (i - 1, i):
        if 0 <= j < u.size - 1:
            ul, ur = u[j], u[j + 1]
            cl, cr = c[j], c[j + 1]
            wr = w[j + 1] / mass

            def g(s, ul=ul, ur=ur, cl=cl, cr=cr, wr=wr):
                cs = cl + (cr - cl) * (s - ul) / (ur - ul)
                return -abs(wr + 0.5 * (ur - s) * (cs + cr) - math.exp(-s))

            res = optimize.minimize_scalar(g, bounds=(ul, ur), method="bounded",
                                           options={"xatol": 1e-13})
            cand.append(-res.fun)
    # the tail of Exp(1) beyond the grid is a gap of its own
    cand.append(math.exp(-u[-1]))
    return float(max(cand))
