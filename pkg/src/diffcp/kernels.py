"""Gaussian kernel machinery for the whole-line diffusive Carr-Penrose problem.

The coarsening scale ``Lambda(t)`` is stored as a :class:`RateHistory`,
piecewise linear in time.  Everything the free-space kernel needs is a
functional of ``A(t) = 1/Lambda(t)``:

``m1(s, T)``
    growth factor ``exp(int_s^T A)``;
``m2(s, T)``
    accumulated drift ``int_s^T exp(int_r^T A) dr``;
``sigma2(s, T)``
    accumulated variance ``int_s^T exp(2 int_r^T A) dr``.

Because ``A`` is the reciprocal of a linear function on every segment, the
nested exponential integrals have closed-form antiderivatives per segment.
Intervals are assembled with the composition rules

    m1(s,T) = m1(s,u) m1(u,T)
    m2(s,T) = m1(u,T) m2(s,u) + m2(u,T)
    sigma2(s,T) = m1(u,T)^2 sigma2(s,u) + sigma2(u,T)

which only ever add positive numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "RateHistory",
    "KernelMoments",
    "StandardizedOffset",
    "AffineDrift",
    "moments",
    "whole_line_green",
    "standardized_offset",
    "classical_path",
    "drift",
    "g2_diagonal",
]


def _log1p_over(x):
    """``log1p(x)/x`` with the removable singularity at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, np.log1p(safe) / safe)


def _one_minus_exp_over(u):
    """``(1 - exp(-u))/u`` with the removable singularity at 0."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-8
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 - 0.5 * u, -np.expm1(-safe) / safe)


def _piece(lam_a, lam_b, h):
    """Exact moments over one linear piece of ``Lambda`` of duration ``h``.

    Returns ``(int A, m2, sigma2)`` of the piece.  Both endpoints infinite
    means ``A = 0`` on the piece.
    """
    lam_a = np.asarray(lam_a, dtype=float)
    lam_b = np.asarray(lam_b, dtype=float)
    h = np.asarray(h, dtype=float)
    flat = np.isinf(lam_a)
    la = np.where(flat, 1.0, lam_a)
    lb = np.where(flat, 1.0, lam_b)
    x = lb / la - 1.0
    int_a = np.where(flat, 0.0, h / la * _log1p_over(x))
    ell = np.where(flat, 0.0, np.log1p(x))
    # Lambda_b * int A, which tends to h when A -> 0
    scale = np.where(flat, h, h * (1.0 + x) * _log1p_over(x))
    e1 = scale * _one_minus_exp_over(ell - int_a)
    e2 = scale * _one_minus_exp_over(ell - 2.0 * int_a)
    return int_a, e1, e2


class KernelMoments(NamedTuple):
    """Moments ``(m1, m2, sigma2)`` of the Gaussian kernel over ``(s, T)``."""

    m1: float
    m2: float
    sigma2: float
    interval: tuple[float, float]


class StandardizedOffset(NamedTuple):
    """``z = a - b*y`` with ``a = m2/sigma`` and ``b = m1/sigma``."""

    z: float
    a: float
    b: float


@dataclass(frozen=True)
class RateHistory:
    """Sampled coarsening scale ``Lambda(t)``, piecewise linear in ``t``.

    ``lambda_values`` may be ``inf`` to encode ``A = 0`` on a run of
    segments; a segment joining a finite and an infinite value is rejected.
    Evaluation outside ``[times[0], times[-1]]`` raises ``ValueError``.
    """

    times: np.ndarray
    lambda_values: np.ndarray
    _cum: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        lam = np.array(self.lambda_values, dtype=float)
        if t.ndim != 1 or t.shape != lam.shape or t.size == 0:
            raise ValueError("times and lambda_values must be 1-d arrays of equal length")
        if np.any(np.isnan(t)) or np.any(np.isnan(lam)) or not np.all(np.isfinite(t)):
            raise ValueError("non-finite samples in rate history")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be nonnegative and strictly increasing")
        if np.any(lam <= 0):
            raise ValueError("lambda_values must be positive")
        inf = np.isinf(lam)
        if np.any(inf[:-1] != inf[1:]):
            raise ValueError("segment joins finite and infinite Lambda")
        t.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "lambda_values", lam)

        int_a, e1, e2 = _piece(lam[:-1], lam[1:], np.diff(t))
        n = t.size
        big_l = np.zeros(n)
        m2 = np.zeros(n)
        s2 = np.zeros(n)
        big_l[1:] = np.cumsum(int_a)
        for i in range(n - 1):
            g = np.exp(int_a[i])
            m2[i + 1] = g * m2[i] + e1[i]
            s2[i + 1] = g * g * s2[i] + e2[i]
        object.__setattr__(self, "_cum", (int_a, e1, e2, big_l, m2, s2))

    @classmethod
    def constant_rate(cls, a: float, t_end: float, t_start: float = 0.0) -> "RateHistory":
        """History with constant ``A = a >= 0`` on ``[t_start, t_end]``."""
        if a < 0:
            raise ValueError("A must be nonnegative")
        lam = np.inf if a == 0 else 1.0 / a
        return cls(np.array([t_start, t_end]), np.array([lam, lam]))

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite evaluation time")
        lo, hi = self.times[0], self.times[-1]
        if np.any(t < lo) or np.any(t > hi):
            raise ValueError(f"time outside sampled range [{lo}, {hi}]")
        return t

    def _locate(self, t):
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, max(self.times.size - 2, 0))

    def lam(self, t):
        """``Lambda(t)`` by linear interpolation."""
        t = self._check(t)
        if self.times.size == 1:
            return np.full_like(t, self.lambda_values[0])
        i = self._locate(t)
        t0, t1 = self.times[i], self.times[i + 1]
        l0, l1 = self.lambda_values[i], self.lambda_values[i + 1]
        inf = np.isinf(l0)
        l0f = np.where(inf, 0.0, l0)
        l1f = np.where(inf, 0.0, l1)
        w = (t - t0) / (t1 - t0)
        return np.where(inf, np.inf, l0f + w * (l1f - l0f))

    def rate(self, t):
        """``A(t) = 1/Lambda(t)``."""
        return 1.0 / self.lam(t)

    def moments_from_start(self, t):
        """Vectorized ``(m1, m2, sigma2)`` over ``(times[0], t)``."""
        t = self._check(t)
        if self.times.size == 1:
            z = np.zeros_like(t)
            return np.ones_like(t), z, z
        int_a, e1, e2, big_l, m2c, s2c = self._cum
        i = self._locate(t)
        lam_i = self.lambda_values[i]
        lam_t = self.lam(t)
        pa, p1, p2 = _piece(lam_i, lam_t, t - self.times[i])
        g = np.exp(pa)
        m1 = np.exp(big_l[i] + pa)
        return m1, g * m2c[i] + p1, g * g * s2c[i] + p2

    def interval_moments(self, s: float, T: float) -> tuple[float, float, float]:
        """Scalar ``(m1, m2, sigma2)`` over ``(s, T)`` assembled piecewise."""
        s = float(self._check(s))
        T = float(self._check(T))
        if s > T:
            raise ValueError("need s <= T")
        if s == T:
            return 1.0, 0.0, 0.0
        if self.times.size == 1:
            raise ValueError("single-sample history cannot span an interval")
        knots = self.times
        inner = knots[(knots > s) & (knots < T)]
        pts = np.concatenate(([s], inner, [T]))
        lam = self.lam(pts)
        pa, p1, p2 = _piece(lam[:-1], lam[1:], np.diff(pts))
        # weight of each piece is the growth from its right end to T
        tail = np.concatenate((np.cumsum(pa[::-1])[::-1][1:], [0.0]))
        g = np.exp(tail)
        m1 = float(np.exp(np.sum(pa)))
        return m1, float(np.sum(g * p1)), float(np.sum(g * g * p2))


def moments(A: RateHistory, s: float, T: float) -> KernelMoments:
    """Kernel moments ``(m1, m2, sigma2)`` of ``A = 1/Lambda`` over ``(s, T)``.

    Raises ``ValueError`` for times outside the history or ``s > T``.
    """
    if not (0 <= s <= T):
        raise ValueError("need 0 <= s <= T")
    m1, m2, s2 = A.interval_moments(s, T)
    return KernelMoments(m1, m2, s2, (float(s), float(T)))


def _require_positive(name, value):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")


def whole_line_green(A: RateHistory, eps: float, x, y, T: float):
    """Whole-line Green's function ``G_eps(x, y, 0, T)``.

    Gaussian in ``x`` with mean ``m1*y - m2`` and variance ``eps*sigma2``.
    Broadcasts over ``x`` and ``y``.
    """
    _require_positive("T", T)
    _require_positive("eps", eps)
    m1, m2, s2 = A.interval_moments(0.0, T)
    var = eps * s2
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x + m2 - m1 * y
    return np.exp(-d * d / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def standardized_offset(A: RateHistory, eps: float, y, T: float) -> StandardizedOffset:
    """Offset ``z_{y,T} = (m2 - m1*y)/sigma`` of the kernel mean from the origin."""
    _require_positive("eps", eps)
    m1, m2, s2 = A.interval_moments(0.0, T)
    if s2 <= 0:
        raise ValueError("sigma^2 vanishes (T = 0)")
    sig = np.sqrt(s2)
    a = m2 / sig
    b = m1 / sig
    return StandardizedOffset(a - b * np.asarray(y, dtype=float), a, b)


def classical_path(A: RateHistory, x: float, y: float, s: float, T: float) -> float:
    """Integral curve of the drift through ``(x, T)`` evaluated at time ``s``.

    Closed form in the interval moments; equals ``y`` at ``s = 0`` and ``x``
    at ``s = T``.
    """
    if not (0 <= s <= T):
        raise ValueError("need 0 <= s <= T")
    _, _, s2T = A.interval_moments(0.0, T)
    m1s, m2s, s2s = A.interval_moments(0.0, s)
    m1sT, m2sT, s2sT = A.interval_moments(s, T)
    num = x * m1sT * s2s + y * m1s * s2sT + m1sT * m2sT * s2s - m2s * s2sT
    return num / s2T


@dataclass(frozen=True)
class AffineDrift:
    """Drift ``lambda(x, s) = slope(s)*x + offset(s)`` of the exit-cost problem.

    Built from a rate history and a source position, or with constant
    coefficients for the constant-drift oracle.
    """

    history: RateHistory | None = None
    y: float = 1.0
    const_slope: float = 0.0
    const_offset: float = -1.0

    @classmethod
    def from_history(cls, A: RateHistory, y: float) -> "AffineDrift":
        return cls(history=A, y=float(y))

    @classmethod
    def constant(cls, offset: float = -1.0, slope: float = 0.0) -> "AffineDrift":
        return cls(history=None, const_slope=float(slope), const_offset=float(offset))

    def coefficients(self, s):
        s = np.asarray(s, dtype=float)
        if self.history is None:
            return np.full_like(s, self.const_slope), np.full_like(s, self.const_offset)
        m1, m2, s2 = self.history.moments_from_start(s)
        if np.any(s2 <= 0):
            raise ValueError("drift is singular at s = 0")
        a = self.history.rate(s) + 1.0 / s2
        b = -1.0 + (m2 - m1 * self.y) / s2
        return a, b

    def __call__(self, x, s):
        a, b = self.coefficients(s)
        return a * np.asarray(x, dtype=float) + b


def drift(A: RateHistory, x, y: float, s) -> np.ndarray:
    """Drift ``lambda(x, y, s)`` of the ratio problem; singular at ``s = 0``."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("drift is singular at s = 0")
    return AffineDrift.from_history(A, y)(x, s)


def g2_diagonal(A: RateHistory, s):
    """``g2(s, s) = (sigma2(s) - m2(s))/m1(s)``; nonnegative and nondecreasing."""
    m1, m2, s2 = A.moments_from_start(s)
    return (s2 - m2) / m1
