"""Orders of flatness of sampled coordinate functions.

The order of flatness of f at t0 is the largest integer p with
f(t) = (t - t0)^p g(t) for a continuous g.  On sampled data it is estimated
by regressing log|f| against log|t - t0| over a window; the construction of
the componentwise rescaled curve (t - t0)^{-d_i} c_i(t) lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LemmaViolated, WindowTooSmall

SLOPE_MARGIN = 0.25       # accept order p when the log-log slope reaches p - 0.25
ZERO_FLOOR = 1e-13        # samples below floor*scale are treated as exact zeros
DEFAULT_WINDOW = 40       # regression window, in samples per side
DEFAULT_TOL_ZERO = 1e-10  # gauge for "the curve hits zero", relative to the norm coordinate


@dataclass(frozen=True)
class SampledCurve:
    """A curve sampled on a strictly increasing grid, with invariant coordinates.

    ``degrees`` carries the homogeneity degrees of the generating system the
    values came from; coordinate 0 is the squared-norm coordinate.
    """

    grid: np.ndarray
    values: np.ndarray
    degrees: tuple[int, ...]

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or len(grid) < 3:
            raise ValueError("grid must be one-dimensional with at least 3 samples")
        if (np.diff(grid) <= 0).any():
            raise ValueError("grid must be strictly increasing")
        if values.ndim != 2 or values.shape[0] != len(grid):
            raise ValueError(f"values shape {values.shape} does not match grid of length {len(grid)}")
        if not (np.isfinite(grid).all() and np.isfinite(values).all()):
            raise ValueError("grid and values must be finite")
        degrees = tuple(int(d) for d in self.degrees)
        if len(degrees) != values.shape[1]:
            raise ValueError("degrees length must match the number of value columns")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "degrees", degrees)

    @property
    def n_samples(self) -> int:
        return len(self.grid)

    def zero_threshold(self, tol_zero: float = DEFAULT_TOL_ZERO) -> float:
        """Absolute gauge below which the norm coordinate counts as zero."""
        return tol_zero * (1.0 + float(np.abs(self.values[:, 0]).max()))


@dataclass(frozen=True)
class FlatnessReport:
    """Estimated orders of flatness at one grid instant and the consistency verdict.

    ``orders[i] = -1`` encodes "not flat at all" (nonzero value at the
    instant); orders are capped at the max_order used for the estimate.
    ``lemma_holds`` records whether [order of c_1 >= 2] and
    [order of c_i >= d_i for all i] agree, as the theory demands for curves
    that genuinely live in the image of the orbit map.
    """

    instant: int
    orders: tuple[int, ...]
    lemma_holds: bool
    confidence: float

    def to_dict(self) -> dict:
        return {
            "instant": self.instant,
            "orders": list(self.orders),
            "lemma_holds": self.lemma_holds,
            "confidence": self.confidence,
        }


def _window_indices(n: int, instant: int, window: int) -> np.ndarray:
    lo = max(0, instant - window)
    hi = min(n - 1, instant + window)
    idx = np.arange(lo, hi + 1)
    return idx[idx != instant]


def _flatness_estimate(grid, f, instant, max_order, window, tol_zero):
    """Core estimator; returns (order, confidence)."""
    n = len(grid)
    if max(instant, n - 1 - instant) < 6:
        raise WindowTooSmall(f"need at least 6 samples on one side of instant {instant}")
    fscale = float(np.abs(f).max())
    if fscale == 0.0:
        return max_order, 1.0
    if abs(f[instant]) > tol_zero * fscale:
        return -1, 1.0
    idx = _window_indices(n, instant, window)
    tau = np.abs(grid[idx] - grid[instant])
    vals = np.abs(f[idx])
    usable = vals >= ZERO_FLOOR * fscale
    if usable.sum() < 3:
        # everything in the window sits at the zero floor: flat beyond resolution
        return max_order, 1.0
    x = np.log(tau[usable])
    y = np.log(vals[usable])
    xm, ym = x.mean(), y.mean()
    denom = ((x - xm) ** 2).sum()
    slope = float(((x - xm) * (y - ym)).sum() / denom)
    resid = y - (ym + slope * (x - xm))
    rms = float(np.sqrt((resid**2).mean()))
    order = int(np.floor(slope + SLOPE_MARGIN))
    order = max(0, min(order, max_order))
    if order == max_order and slope + SLOPE_MARGIN > max_order:
        margin = 0.5  # capped orders sit arbitrarily far above the last boundary
    else:
        margin = min(slope - (order - SLOPE_MARGIN), (order + 1 - SLOPE_MARGIN) - slope)
    conf_margin = float(np.clip(2.0 * margin, 0.0, 1.0))
    conf_fit = 1.0 / (1.0 + rms)
    coverage = usable.sum() / len(idx)
    conf = conf_margin * conf_fit * float(np.clip(2.0 * coverage, 0.0, 1.0))
    return order, conf


def estimate_flatness(
    samples: SampledCurve,
    coord: int,
    instant: int,
    max_order: int,
    window: int = DEFAULT_WINDOW,
    tol_zero: float = DEFAULT_TOL_ZERO,
) -> int:
    """Estimated order of flatness of coordinate ``coord`` at a grid instant.

    Returns -1 when the value at the instant is not zero (relative to the
    coordinate's own scale).  Samples at the relative zero floor are treated
    as exact zeros: they are excluded from the regression and count toward a
    higher order.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    order, _ = _flatness_estimate(samples.grid, samples.values[:, coord], instant, max_order, window, tol_zero)
    return order


def check_multiplicity_lemma(
    curve: SampledCurve,
    instant: int,
    max_order: int | None = None,
    window: int = DEFAULT_WINDOW,
    tol_zero: float = DEFAULT_TOL_ZERO,
) -> FlatnessReport:
    """Estimate all flatness orders at a zero of the curve and check their consistency.

    At a genuine zero of a curve in the image of an orbit map, the norm
    coordinate is flat of order >= 2 exactly when every coordinate is flat of
    order >= its degree; ``lemma_holds`` reports whether the estimates agree
    with that equivalence.
    """
    if curve.values[instant, 0] > curve.zero_threshold(tol_zero):
        raise ValueError(f"curve does not vanish at grid index {instant}")
    if max_order is None:
        max_order = max(curve.degrees) + 2
    orders = []
    confs = []
    for coord in range(curve.values.shape[1]):
        order, conf = _flatness_estimate(curve.grid, curve.values[:, coord], instant, max_order, window, tol_zero)
        orders.append(order)
        confs.append(conf)
    cond_norm = orders[0] >= 2
    cond_all = all(o >= d for o, d in zip(orders, curve.degrees))
    return FlatnessReport(
        instant=int(instant),
        orders=tuple(orders),
        lemma_holds=bool(cond_norm == cond_all),
        confidence=float(min(confs)),
    )


def _one_sided_fill(s_side, v_side, s_fill):
    """Quadratic extrapolation from one side onto the excluded gap (per column)."""
    npts = min(5, len(s_side))
    deg = min(2, npts - 1)
    coef = np.polynomial.polynomial.polyfit(s_side[-npts:], v_side[-npts:], deg)
    return np.polynomial.polynomial.polyval(s_fill, coef).T


def rescaled_curve(
    curve: SampledCurve,
    t0: float,
    exclude_radius: float | None = None,
    window: int = DEFAULT_WINDOW,
    tol_zero: float = DEFAULT_TOL_ZERO,
) -> SampledCurve:
    """Componentwise rescaling (t - t0)^{-d_i} c_i(t) around a zero of the curve.

    The flatness consistency check runs first; if it fails no differentiable
    continuation exists from this instant and LemmaViolated is raised.
    Samples within ``exclude_radius`` of t0 (default: 3 grid steps), where the
    division amplifies round-off, are filled by one-sided quadratic
    extrapolation from each side instead.
    """
    grid = curve.grid
    if not (grid[0] <= t0 <= grid[-1]):
        raise ValueError("t0 must lie inside the sampled range")
    nearest = int(np.argmin(np.abs(grid - t0)))
    try:
        report = check_multiplicity_lemma(curve, nearest, window=window, tol_zero=tol_zero)
    except ValueError as exc:
        raise LemmaViolated(str(exc)) from exc
    if not report.lemma_holds:
        raise LemmaViolated(
            f"flatness orders {report.orders} are inconsistent with degrees {curve.degrees} at t0={t0}"
        )

    if exclude_radius is None:
        exclude_radius = 3.0 * float(np.median(np.diff(grid)))
    s = grid - t0
    hole = np.abs(s) <= exclude_radius
    out = np.array(curve.values)
    keep = ~hole
    powers = np.column_stack([s**d for d in curve.degrees])
    out[keep] = curve.values[keep] / powers[keep]

    # sources ordered so the last entries are the ones nearest the hole
    left_src = np.flatnonzero(keep & (s < 0))
    right_src = np.flatnonzero(keep & (s > 0))[::-1]
    if len(left_src) == 0 and len(right_src) == 0:
        raise WindowTooSmall("exclude_radius swallows every sample")
    fill_left = np.flatnonzero(hole & (s < 0))
    fill_right = np.flatnonzero(hole & (s > 0))
    fill_mid = np.flatnonzero(hole & (s == 0))
    if len(fill_left):
        src = left_src if len(left_src) else right_src
        out[fill_left] = _one_sided_fill(s[src], out[src], s[fill_left])
    if len(fill_right):
        src = right_src if len(right_src) else left_src
        out[fill_right] = _one_sided_fill(s[src], out[src], s[fill_right])
    if len(fill_mid):
        sides = [
            _one_sided_fill(s[src], out[src], s[fill_mid])
            for src in (left_src, right_src)
            if len(src)
        ]
        out[fill_mid] = np.mean(sides, axis=0)

    return SampledCurve(grid, out, curve.degrees)
