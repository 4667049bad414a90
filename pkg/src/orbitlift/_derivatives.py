"""One-sided derivative estimation and extrapolation on sampled data.

Shared between the lift repair step (kink detection, derivative matching at
zeros) and the verification probes.
"""

from __future__ import annotations

import numpy as np

from .errors import WindowTooSmall

STENCIL = 5        # points per one-sided stencil in the kink scan (order h^4)
QUOTIENT_PTS = 6   # samples used when extrapolating difference quotients


def polyfit_derivative(ts, ys, t0: float, degree: int = 3) -> np.ndarray:
    """Derivative at t0 of a least-squares polynomial through (ts, ys).

    ys may be (k,) or (k, dim); the fit degree adapts down when few points
    are available.
    """
    ts = np.asarray(ts, dtype=float) - t0
    ys = np.asarray(ys, dtype=float)
    if len(ts) < 2:
        raise WindowTooSmall("need at least 2 samples for a derivative estimate")
    deg = min(degree, len(ts) - 1)
    coef = np.polynomial.polynomial.polyfit(ts, ys, deg)
    return coef[1]


def extrapolate_to_zero(xs, ys) -> np.ndarray:
    """Neville polynomial extrapolation of (xs, ys) to x = 0.

    ys has shape (k,) or (k, dim).  With xs a geometric span sequence this is
    Richardson extrapolation of difference quotients.
    """
    xs = np.asarray(xs, dtype=float)
    tableau = [np.asarray(y, dtype=float) for y in ys]
    k = len(tableau)
    if k == 0:
        raise ValueError("nothing to extrapolate")
    for level in range(1, k):
        nxt = []
        for i in range(k - level):
            xi, xj = xs[i], xs[i + level]
            nxt.append((xj * tableau[i] - xi * tableau[i + 1]) / (xj - xi))
        tableau = nxt
    return tableau[0]


def quotient_limit(grid, points, k0: int, t0: float, side: int, npts: int = QUOTIENT_PTS) -> np.ndarray:
    """One-sided limit of (w(t) - w(t0)) / (t - t0) with w(t0) treated as 0.

    Used at zeros of the lift: fits a quadratic to the difference quotients
    on the requested side (side=+1 uses samples after k0, side=-1 before)
    and evaluates it at t0.
    """
    m = len(grid)
    if side > 0:
        idx = np.arange(k0 + 1, min(m, k0 + 1 + npts))
    else:
        idx = np.arange(max(0, k0 - npts), k0)
    if len(idx) < 2:
        raise WindowTooSmall(f"not enough samples on side {side:+d} of index {k0}")
    tau = grid[idx] - t0
    quot = points[idx] / tau[:, None]
    deg = min(2, len(idx) - 1)
    coef = np.polynomial.polynomial.polyfit(tau, quot, deg)
    return np.atleast_1d(coef[0])


def one_sided_derivative(grid, points, k0: int, side: int, npts: int = QUOTIENT_PTS, degree: int = 3) -> np.ndarray:
    """Polynomial-fit one-sided derivative of sampled points at grid[k0].

    The sample at k0 itself is included; side=+1 fits forward, side=-1
    backward.
    """
    m = len(grid)
    if side > 0:
        idx = np.arange(k0, min(m, k0 + npts))
    else:
        idx = np.arange(max(0, k0 - npts + 1), k0 + 1)
    if len(idx) < 2:
        raise WindowTooSmall(f"not enough samples on side {side:+d} of index {k0}")
    return polyfit_derivative(grid[idx], points[idx], grid[k0], degree)


def batched_one_sided(grid, points, side: int, stencil: int = STENCIL) -> tuple[np.ndarray, np.ndarray]:
    """One-sided derivative estimates at every index admitting a full stencil.

    Returns (valid_indices, derivatives).  Weights come from solving the
    local Vandermonde moment system, so non-uniform grids are handled; the
    truncation error is O(h^{stencil-1}).
    """
    grid = np.asarray(grid, dtype=float)
    points = np.asarray(points, dtype=float)
    m = len(grid)
    if m < stencil:
        return np.empty(0, dtype=int), np.empty((0, points.shape[1]))
    if side > 0:
        base = np.arange(0, m - stencil + 1)
        offsets = np.arange(stencil)
    else:
        base = np.arange(stencil - 1, m)
        offsets = -np.arange(stencil)[::-1]
    taus = grid[base[:, None] + offsets[None, :]] - grid[base][:, None]
    scale = np.abs(taus).max(axis=1, keepdims=True)
    u = taus / scale
    powers = u[:, None, :] ** np.arange(stencil)[None, :, None]  # (k, p, j)
    rhs = np.zeros(stencil)
    rhs[1] = 1.0
    weights = np.linalg.solve(powers, np.broadcast_to(rhs, (len(base), stencil)).copy())
    weights = weights / scale
    stacked = points[base[:, None] + offsets[None, :]]  # (k, stencil, dim)
    derivs = np.einsum("kj,kjd->kd", weights, stacked)
    return base, derivs
