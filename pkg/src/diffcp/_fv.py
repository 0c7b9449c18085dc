"""Finite-volume machinery for advection-diffusion on a 1-d node grid.

Node ``0`` carries a homogeneous Dirichlet value; the last node closes a
half cell with zero flux.  Interior fluxes are centered:

    J_{j+1/2} = v_f * (c_j + c_{j+1})/2 - D * (c_{j+1} - c_j)/h_j

and cell ``i`` evolves by ``V_i dc_i/dt = J_{i-1/2} - J_{i+1/2}``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded


def _offsets(reach: float, h0: float, alpha: float) -> np.ndarray:
    d = [0.0]
    while d[-1] < reach:
        d.append(d[-1] + h0 + alpha * d[-1])
    return np.array(d)


def graded_nodes(x_left: float, x_right: float, h0: float, alpha: float,
                 anchor: float = 0.0) -> np.ndarray:
    """Nodes with spacing ``h0 + alpha*|x - anchor|``, from ``x_left`` to at least ``x_right``.

    ``anchor`` must lie in ``[x_left, x_right)``; the left end is hit exactly.
    """
    if not (h0 > 0 and alpha >= 0 and x_left <= anchor < x_right):
        raise ValueError("bad grid parameters")
    right = anchor + _offsets(x_right - anchor, h0, alpha)
    if x_left == anchor:
        return right
    left = anchor - _offsets(anchor - x_left, h0, alpha)[1:]
    left = left[left > x_left + 0.5 * h0]
    return np.concatenate(([x_left], left[::-1], right))


def extend_nodes(x: np.ndarray, x_right: float, h0: float, alpha: float,
                 anchor: float = 0.0) -> np.ndarray:
    out = list(x)
    while out[-1] < x_right:
        out.append(out[-1] + h0 + alpha * abs(out[-1] - anchor))
    return np.array(out)


class Mesh:
    """Node grid with control volumes and face positions."""

    def __init__(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.size < 3 or np.any(np.diff(x) <= 0):
            raise ValueError("need at least 3 increasing nodes")
        self.x = x
        self.h = np.diff(x)
        self.faces = 0.5 * (x[:-1] + x[1:])
        v = np.empty_like(x)
        v[1:-1] = 0.5 * (x[2:] - x[:-2])
        v[0] = 0.5 * self.h[0]
        v[-1] = 0.5 * self.h[-1]
        self.volumes = v

    def mass(self, c) -> float:
        return float(np.dot(self.volumes, c))

    def moment(self, c) -> float:
        return float(np.dot(self.volumes * self.x, c))


def flux_coefficients(mesh: Mesh, velocity, diffusion: float):
    """Return ``(a, b)`` with ``J_{j+1/2} = a_j c_j - b_j c_{j+1}``."""
    d = diffusion / mesh.h
    half = 0.5 * np.asarray(velocity, dtype=float)
    return d + half, d - half


def apply_operator(a, b, c):
    """``L c`` with ``(L c)_i = J_{i-1/2} - J_{i+1/2}`` and the Dirichlet row zeroed."""
    j = a * c[:-1] - b * c[1:]
    r = np.zeros_like(c)
    r[:-1] -= j
    r[1:] += j
    r[0] = 0.0
    return r


def theta_step(mesh: Mesh, c, a_old, b_old, a_new, b_new, dt: float, theta: float):
    """One theta-method step; ``theta = 1`` is implicit Euler, ``1/2`` Crank-Nicolson."""
    n = c.size
    rhs = mesh.volumes * c
    if theta < 1.0:
        rhs = rhs + (1.0 - theta) * dt * apply_operator(a_old, b_old, c)
    diag = np.zeros(n)
    diag[:-1] -= a_new
    diag[1:] -= b_new
    ab = np.zeros((3, n))
    ab[1] = mesh.volumes - theta * dt * diag
    ab[0, 1:] = -theta * dt * b_new
    ab[2, :-1] = -theta * dt * a_new
    # Dirichlet row
    ab[1, 0] = 1.0
    ab[0, 1] = 0.0
    rhs[0] = 0.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def boundary_flux(a, b, c) -> float:
    """Flux into the Dirichlet node, ``-J_{1/2}``, positive when mass leaves."""
    return float(-(a[0] * c[0] - b[0] * c[1]))


def cell_averages(survival, mesh: Mesh) -> np.ndarray:
    """Control-volume averages from a survival function ``x -> P(X > x)``."""
    edges = np.concatenate(([mesh.x[0]], mesh.faces, [mesh.x[-1]]))
    w = survival(edges)
    return np.maximum(w[:-1] - w[1:], 0.0) / mesh.volumes


def fitted_coth(p):
    """``(p/2) coth(p/2)``, the diffusion enhancement of exponential fitting."""
    p = np.asarray(p, dtype=float)
    small = np.abs(p) < 1e-4
    ps = np.where(small, 1.0, p)
    return np.where(small, 1.0 + p * p / 12.0, 0.5 * ps / np.tanh(0.5 * ps))


def fitted_backward_step(x, u, drift, diffusion, dt, left, right):
    """Implicit Euler step of ``u_t = drift u_x + D u_xx`` with exponential fitting.

    Nonconservative form on nodes ``x``; Dirichlet values ``left``/``right``.
    The fitted matrix is an M-matrix, so positive data stay positive.
    """
    h = np.diff(x)
    hl = h[:-1]
    hr = h[1:]
    dr = np.asarray(drift, dtype=float)[1:-1]
    hm = 0.5 * (hl + hr)
    # the larger spacing keeps both off-diagonals nonnegative
    p = dr * np.maximum(hl, hr) / diffusion
    deff = diffusion * fitted_coth(p)
    lo = deff / (hl * hm) - dr / (hl + hr)
    up = deff / (hr * hm) + dr / (hl + hr)
    n = u.size
    ab = np.zeros((3, n))
    ab[1, 0] = 1.0
    ab[1, -1] = 1.0
    ab[1, 1:-1] = 1.0 + dt * (lo + up)
    ab[0, 2:] = -dt * up
    ab[2, :-2] = -dt * lo
    rhs = np.array(u, dtype=float)
    rhs[0] = left
    rhs[-1] = right
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def log_grid_steps(t0: float, t1: float, kappa: float, dt_max: float):
    """Time levels from ``t0`` to ``t1`` with steps ``min(kappa*t, dt_max)``."""
    ts = [t0]
    while ts[-1] < t1 * (1 - 1e-14):
        ts.append(min(ts[-1] + min(kappa * ts[-1], dt_max), t1))
    return np.array(ts)


def isclose_end(t: float, t_end: float) -> bool:
    return t >= t_end * (1 - 1e-14) or math.isclose(t, t_end)
