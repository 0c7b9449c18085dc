"""Conditional Gaussian tails.

For a standard normal ``Z`` and threshold ``z`` the overshoot
``X_z = (Z - z | Z > z)`` has density proportional to ``exp(-(x+z)^2/2)`` on
``x >= 0``.  Its mean ``m(z)`` solves ``m' = m^2 + z m - 1``.

Everything is evaluated through the scaled complement ``erfcx`` or through
``log_ndtr`` so that nothing cancels for large ``|z|``.
"""
from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize
from scipy.special import erfcx, log_ndtr

__all__ = [
    "RiccatiBlowupError",
    "ConditionalTail",
    "mills_ratio",
    "conditional_mean",
    "conditional_tail",
    "riccati_rhs",
    "riccati_integrate",
    "conditional_pdf",
    "tail_probability",
    "second_moment",
    "second_moment_identity",
    "scaled_ks_to_exponential",
    "monotone_weight_ratio",
    "mass_split_ratio",
    "quadrature_window",
]

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# beyond this threshold the continued fraction is more accurate than 1/R - z
_CF_THRESHOLD = 10.0
_CF_TERMS = 80


class RiccatiBlowupError(ArithmeticError):
    """The Riccati integration left the admissible band ``0 < m < 10(1+|z|)``."""


class ConditionalTail(NamedTuple):
    z: float
    m: float
    second_moment: float


def _finite(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("threshold must be finite")
    return z


def mills_ratio(z):
    """``exp(z^2/2) * int_z^inf exp(-t^2/2) dt``."""
    z = _finite(z)
    return _SQRT_HALF_PI * erfcx(z / math.sqrt(2.0))


def _cf_mean(z):
    # m(z) = 1/(z + 2/(z + 3/(z + ...))), evaluated bottom-up
    acc = np.zeros_like(z)
    for k in range(_CF_TERMS, 1, -1):
        acc = k / (z + acc)
    return 1.0 / (z + acc)


def conditional_mean(z):
    """Mean ``m(z) = E[Z - z | Z > z]``; positive and strictly decreasing."""
    z = _finite(z)
    big = z > _CF_THRESHOLD
    zs = np.where(big, 0.0, z)
    out = np.where(big, _cf_mean(np.where(big, z, _CF_THRESHOLD)), 1.0 / mills_ratio(zs) - zs)
    return out if out.ndim else float(out)


def second_moment(z) -> float:
    """``E[X_z^2]`` by quadrature over the conditional density."""
    z = float(_finite(z))
    lo, hi = quadrature_window(z)
    val, _ = integrate.quad(lambda x: x * x * conditional_pdf(z, x), lo, hi,
                            epsabs=1e-15, epsrel=1e-13, limit=200, points=_peak(z))
    return val


def conditional_tail(z) -> ConditionalTail:
    z = float(_finite(z))
    return ConditionalTail(z, conditional_mean(z), second_moment(z))


def riccati_rhs(z, m):
    """Right side ``m^2 + z m - 1``; equals ``-1`` on the exact solution ``m = -z``."""
    return m * m + z * m - 1.0


def riccati_integrate(z0: float, m0: float, z1: float, step: float = 1e-3) -> float:
    """Integrate ``dm/dz = m^2 + z m - 1`` from ``(z0, m0)`` to ``z1`` with RK4.

    Raises
    ------
    RiccatiBlowupError
        If the iterate leaves ``(0, 10(1+|z|))``.
    """
    if not (np.isfinite(z0) and np.isfinite(m0) and np.isfinite(z1)):
        raise ValueError("non-finite input")
    if step <= 0:
        raise ValueError("step must be positive")
    if m0 <= 0:
        raise RiccatiBlowupError("initial value must be positive")
    n = max(1, int(math.ceil(abs(z1 - z0) / step)))
    h = (z1 - z0) / n
    z, m = float(z0), float(m0)
    f = riccati_rhs
    for i in range(n):
        k1 = f(z, m)
        k2 = f(z + h / 2, m + h / 2 * k1)
        k3 = f(z + h / 2, m + h / 2 * k2)
        k4 = f(z + h, m + h * k3)
        m += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        z = z0 + (i + 1) * h
        if not (0.0 < m < 10.0 * (1.0 + abs(z))):
            raise RiccatiBlowupError(f"solution left admissible band at z={z:.6g}")
    return m


def _log_norm(z):
    # log of int_0^inf exp(-(x+z)^2/2) dx
    return _LOG_SQRT_2PI + log_ndtr(-z)


def conditional_pdf(z, x):
    """Density of ``X_z`` at ``x >= 0``."""
    z = _finite(z)
    x = _finite(x)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    out = np.exp(-0.5 * (x + z) ** 2 - _log_norm(z))
    return out if out.ndim else float(out)


def tail_probability(z, x):
    """``P(X_z > x)`` in closed form."""
    z = _finite(z)
    x = _finite(x)
    out = np.exp(log_ndtr(-(x + z)) - log_ndtr(-z))
    return out if out.ndim else float(out)


def quadrature_window(z: float) -> tuple[float, float]:
    """Integration range ``[0, max(-z, 0) + 12]`` for conditional laws."""
    return 0.0, max(-float(z), 0.0) + 12.0


def _peak(z):
    return [-z] if z < 0 else None


def second_moment_identity(z) -> float:
    """Residual ``E[X_z^2] + z m(z) - 1``; zero up to quadrature error."""
    z = float(_finite(z))
    return second_moment(z) + z * conditional_mean(z) - 1.0


def scaled_ks_to_exponential(z) -> float:
    """Kolmogorov distance between ``X_z/m(z)`` and a unit exponential."""
    z = float(_finite(z))
    m = conditional_mean(z)
    _, hi = quadrature_window(z)

    def gap(u):
        return tail_probability(z, u * m) - np.exp(-u)

    u = np.linspace(0.0, max(hi / m, 40.0), 4001)
    d = np.abs(gap(u))
    i = int(np.argmax(d))
    lo_u, hi_u = u[max(i - 1, 0)], u[min(i + 1, u.size - 1)]
    best = d[i]
    if hi_u > lo_u:
        res = optimize.minimize_scalar(lambda s: -abs(gap(s)), bounds=(lo_u, hi_u),
                                       method="bounded", options={"xatol": 1e-12})
        best = max(best, -res.fun)
    return float(best)


def monotone_weight_ratio(z, f: Callable) -> float:
    """``E[X_z f(X_z)] / E[f(X_z)]`` for a nondecreasing weight ``f >= 0``.

    Raises
    ------
    ZeroDivisionError
        If ``f`` vanishes on the whole quadrature window.
    """
    z = float(_finite(z))
    lo, hi = quadrature_window(z)
    kw = dict(epsabs=1e-15, epsrel=1e-12, limit=400, points=_peak(z))
    den, _ = integrate.quad(lambda x: f(x) * conditional_pdf(z, x), lo, hi, **kw)
    num, _ = integrate.quad(lambda x: x * f(x) * conditional_pdf(z, x), lo, hi, **kw)
    if den <= 0:
        raise ZeroDivisionError("weight vanishes on the quadrature window")
    return num / den


def mass_split_ratio(z) -> float:
    """``P(X_z < m(z)) / P(X_z > m(z))``, the mass below the mean over the mass above."""
    z = float(_finite(z))
    above = tail_probability(z, conditional_mean(z))
    return (1.0 - above) / above
