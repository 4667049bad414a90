"""Lifting sampled curves out of invariant coordinates.

``lift_continuous`` produces a globally continuous sampled lift: zeros of the
curve are sent to the origin (the only preimage), and each maximal nonzero
interval is lifted by solving fibers per sample and gluing them with a
nearest-orbit-point matching seeded at the interval's mid sample.
``repair_differentiable`` then fixes the lift at singular instants (isolated
zeros, and interior kinks where one-sided derivatives disagree) by applying a
derivative-matching isotropy element to the right-hand branch.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._derivatives import (
    STENCIL,
    batched_one_sided,
    one_sided_derivative,
    quotient_limit,
)
from .errors import (
    DimensionMismatch,
    IsotropyInsufficient,
    MissingFiberOracle,
    NotInOrbit,
    OrbitMismatch,
    ResidualExceeded,
)
from .flatness import DEFAULT_TOL_ZERO, SampledCurve, rescaled_curve
from .group import FiniteGroupRep, isotropy_mask, nearest_orbit_point, orbit
from .invariants import OrbitMap, eval_orbit_map_many, roots_from_invariants

log = logging.getLogger(__name__)

DEFAULT_TOL_DERIV = 1e-5       # relative gauge for derivative agreement at singular instants
DEFAULT_RESIDUAL_FACTOR = 1e-7  # residual_tol = factor * (1 + max |curve values|)
ACCUMULATION_RUN = 3           # zero runs at least this long count as accumulation-like

KIND_ZERO = "zero_of_curve"
KIND_JUMP = "isotropy_jump"
KIND_ENDPOINT = "interval_endpoint"
KIND_ACCUMULATION = "accumulation_zero"


@dataclass(frozen=True)
class SingularEvent:
    """Annotation of one singular instant of a lift.

    For accumulation runs the derivatives record the outward one-sided
    estimates at the run edges (the inward ones vanish identically).
    """

    instant: float
    kind: str
    left_derivative: np.ndarray | None = None
    right_derivative: np.ndarray | None = None
    aligning_element: int | None = None
    derivative_gap: float | None = None
    orbit_gap: float | None = None

    def to_dict(self) -> dict:
        def _vec(v):
            return None if v is None else [float(x) for x in v]

        return {
            "instant": self.instant,
            "kind": self.kind,
            "left_derivative": _vec(self.left_derivative),
            "right_derivative": _vec(self.right_derivative),
            "aligning_element": self.aligning_element,
            "derivative_gap": self.derivative_gap,
            "orbit_gap": self.orbit_gap,
        }


@dataclass(frozen=True)
class ZeroSet:
    """Maximal grid runs where the curve's norm coordinate is ~ 0.

    ``isolated`` lists indices belonging to short (length <= 2) runs;
    ``accumulation_flags[i]`` marks runs long enough to stand in for
    accumulation sets of zeros.  The complement of the runs is the disjoint
    union of open intervals reported by :meth:`open_intervals`.
    """

    intervals: tuple[tuple[int, int], ...]
    isolated: tuple[int, ...]
    accumulation_flags: tuple[bool, ...]
    n_samples: int

    def open_intervals(self) -> list[tuple[int, int]]:
        """Inclusive index ranges of the maximal nonzero runs."""
        out = []
        cursor = 0
        for start, end in self.intervals:
            if start > cursor:
                out.append((cursor, start - 1))
            cursor = end + 1
        if cursor <= self.n_samples - 1:
            out.append((cursor, self.n_samples - 1))
        return out

    def zero_indices(self) -> np.ndarray:
        idx = [np.arange(s, e + 1) for s, e in self.intervals]
        return np.concatenate(idx) if idx else np.empty(0, dtype=int)


@dataclass(frozen=True)
class SampledLift:
    """A lift of a sampled curve: points in R^dim over the same grid.

    The residual contract ||sigma(points[k]) - values[k]||_inf <= residual_tol
    holds for every k after construction; the tolerance is recorded here.
    """

    grid: np.ndarray
    points: np.ndarray
    annotations: tuple[SingularEvent, ...]
    residual_tol: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] != len(grid):
            raise ValueError(f"points shape {points.shape} does not match grid of length {len(grid)}")
        if not np.isfinite(points).all():
            raise ValueError("lift points must be finite")
        grid.flags.writeable = False
        points.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def detect_zero_set(curve: SampledCurve, tol_zero: float = DEFAULT_TOL_ZERO) -> ZeroSet:
    """Group the grid indices where the norm coordinate is ~ 0 into maximal runs."""
    mask = curve.values[:, 0] <= curve.zero_threshold(tol_zero)
    idx = np.flatnonzero(mask)
    intervals = []
    if len(idx):
        breaks = np.flatnonzero(np.diff(idx) > 1)
        starts = np.concatenate(([0], breaks + 1))
        ends = np.concatenate((breaks, [len(idx) - 1]))
        intervals = [(int(idx[s]), int(idx[e])) for s, e in zip(starts, ends)]
    flags = tuple(e - s + 1 >= ACCUMULATION_RUN for s, e in intervals)
    isolated = tuple(
        int(k) for (s, e), f in zip(intervals, flags) if not f for k in range(s, e + 1)
    )
    return ZeroSet(tuple(intervals), isolated, flags, curve.n_samples)


def glue_continuous(rep: FiniteGroupRep, reps_per_sample, start_point, tol_start: float | None = None) -> np.ndarray:
    """Stepwise branch-consistent gluing of per-sample fiber representatives.

    Each output w_k is the image of reps_per_sample[k] under the group
    element closest to the previous output; ties break to the smallest
    element index.  The start point must lie in the orbit of the first
    representative.
    """
    reps = np.asarray(reps_per_sample, dtype=float)
    start = np.asarray(start_point, dtype=float)
    if reps.ndim != 2 or reps.shape[1] != rep.dim:
        raise DimensionMismatch(f"representatives have shape {reps.shape}, expected (m, {rep.dim})")
    if tol_start is None:
        tol_start = 1e-6 * (1.0 + float(np.linalg.norm(start)))
    gap, _, _ = nearest_orbit_point(rep, reps[0], start)
    if gap > tol_start:
        raise NotInOrbit(f"start point is {gap:.3e} from the orbit of the first representative")
    out = np.empty_like(reps)
    out[0] = start
    for k in range(1, len(reps)):
        _, out[k], _ = nearest_orbit_point(rep, reps[k], out[k - 1])
    return out


def _fiber_representatives(omap: OrbitMap, curve: SampledCurve, fiber_oracle, indices) -> np.ndarray:
    if fiber_oracle is not None:
        oracle = np.asarray(fiber_oracle, dtype=float)
        if oracle.shape != (curve.n_samples, omap.dim):
            raise DimensionMismatch(
                f"fiber oracle has shape {oracle.shape}, expected ({curve.n_samples}, {omap.dim})"
            )
        return oracle[indices]
    if omap.symmetric_n is None:
        raise MissingFiberOracle("non-symmetric generator systems need per-sample fiber representatives")
    return np.stack([roots_from_invariants(omap, curve.values[k]) for k in indices])


def _lift_interval(rep, omap, curve, fiber_oracle, span) -> tuple[int, int, np.ndarray]:
    start, end = span
    indices = np.arange(start, end + 1)
    reps = _fiber_representatives(omap, curve, fiber_oracle, indices)
    mid = (len(indices) - 1) // 2
    out = np.empty_like(reps)
    out[mid] = reps[mid]
    for k in range(mid + 1, len(indices)):
        _, out[k], _ = nearest_orbit_point(rep, reps[k], out[k - 1])
    for k in range(mid - 1, -1, -1):
        _, out[k], _ = nearest_orbit_point(rep, reps[k], out[k + 1])
    return start, end, out


def _check_dims(rep: FiniteGroupRep, omap: OrbitMap, curve: SampledCurve):
    if rep.dim != omap.dim:
        raise DimensionMismatch(f"rep dim {rep.dim} != map dim {omap.dim}")
    if curve.values.shape[1] != omap.n_invariants:
        raise DimensionMismatch(
            f"curve has {curve.values.shape[1]} coordinates, map produces {omap.n_invariants}"
        )
    if curve.degrees != omap.degrees:
        raise DimensionMismatch(f"curve degrees {curve.degrees} != map degrees {omap.degrees}")


def _max_residual(omap: OrbitMap, curve: SampledCurve, points: np.ndarray) -> float:
    return float(np.abs(eval_orbit_map_many(omap, points) - curve.values).max()) if len(points) else 0.0


def _zero_annotations(zero_set: ZeroSet, grid: np.ndarray) -> list[SingularEvent]:
    events = []
    last = zero_set.n_samples - 1
    for (s, e), accum in zip(zero_set.intervals, zero_set.accumulation_flags):
        instant = 0.5 * (grid[s] + grid[e])
        if accum:
            kind = KIND_ACCUMULATION
        elif s == 0 or e == last:
            kind = KIND_ENDPOINT
        else:
            kind = KIND_ZERO
        events.append(SingularEvent(instant=float(instant), kind=kind))
    return events


def lift_continuous(
    rep: FiniteGroupRep,
    omap: OrbitMap,
    curve: SampledCurve,
    fiber_oracle=None,
    tol_zero: float = DEFAULT_TOL_ZERO,
    residual_tol: float | None = None,
    jobs: int = 1,
) -> SampledLift:
    """Globally continuous sampled lift of a curve in invariant coordinates.

    Zero-set samples are lifted to the origin; every maximal nonzero interval
    is lifted independently (optionally in parallel) by fiber solving plus
    stepwise gluing seeded at the interval's mid sample.  The residual
    contract is verified before returning.
    """
    _check_dims(rep, omap, curve)
    zero_set = detect_zero_set(curve, tol_zero)
    points = np.zeros((curve.n_samples, rep.dim))
    spans = zero_set.open_intervals()
    if jobs > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda sp: _lift_interval(rep, omap, curve, fiber_oracle, sp), spans))
    else:
        results = [_lift_interval(rep, omap, curve, fiber_oracle, sp) for sp in spans]
    for start, end, block in results:
        points[start : end + 1] = block

    if residual_tol is None:
        residual_tol = DEFAULT_RESIDUAL_FACTOR * (1.0 + float(np.abs(curve.values).max()))
    resid = _max_residual(omap, curve, points)
    if resid > residual_tol:
        raise ResidualExceeded(f"lift residual {resid:.3e} exceeds tolerance {residual_tol:.3e}")
    events = _zero_annotations(zero_set, curve.grid)
    log.info("lifted %d samples over %d intervals, residual %.3e", curve.n_samples, len(spans), resid)
    return SampledLift(curve.grid, points, tuple(events), residual_tol)


def collision_direction(
    rep: FiniteGroupRep,
    omap: OrbitMap,
    curve: SampledCurve,
    t0: float,
    window: int = 60,
    exclude_radius: float | None = None,
    fiber_oracle=None,
    tol_zero: float = DEFAULT_TOL_ZERO,
) -> np.ndarray:
    """Orbit of valid one-sided derivative vectors at a zero of the curve.

    Rescales the curve componentwise by (t - t0)^{-d_i} on a window around
    t0, lifts the rescaled curve continuously across the exclusion hole, and
    extrapolates the lifted value to t0.  Any point of the returned orbit is
    the derivative at t0 of some locally differentiable lift.
    """
    _check_dims(rep, omap, curve)
    grid = curve.grid
    center = int(np.argmin(np.abs(grid - t0)))
    lo = max(0, center - window)
    hi = min(curve.n_samples - 1, center + window)
    sub = SampledCurve(grid[lo : hi + 1], curve.values[lo : hi + 1], curve.degrees)
    resc = rescaled_curve(sub, t0, exclude_radius, tol_zero=tol_zero)

    if exclude_radius is None:
        exclude_radius = 3.0 * float(np.median(np.diff(sub.grid)))
    s = sub.grid - t0
    keep = np.flatnonzero(np.abs(s) > exclude_radius)
    if len(keep) < 2:
        raise ValueError("window too small around t0")
    if fiber_oracle is not None:
        oracle = np.asarray(fiber_oracle, dtype=float)[lo : hi + 1]
        reps = oracle[keep] / s[keep, None]
    else:
        reps = np.stack([roots_from_invariants(omap, resc.values[k]) for k in keep])
    glued = glue_continuous(rep, reps, reps[0])

    tau = s[keep]
    candidates = []
    left, right = tau < 0, tau > 0
    if left.any():  # nearest-to-hole samples are the last ones on the left
        ts, pts = tau[left][-5:], glued[left][-5:]
        coef = np.polynomial.polynomial.polyfit(ts, pts, min(2, len(ts) - 1))
        candidates.append(np.atleast_1d(coef[0]))
    if right.any():
        ts, pts = tau[right][:5], glued[right][:5]
        coef = np.polynomial.polynomial.polyfit(ts, pts, min(2, len(ts) - 1))
        candidates.append(np.atleast_1d(coef[0]))
    value = np.mean(candidates, axis=0)
    return orbit(rep, value, tol=1e-6 * (1.0 + float(np.linalg.norm(value))))


def _local_step_scale(points: np.ndarray, k: int) -> float:
    lo = max(0, k - 1)
    hi = min(len(points) - 1, k + 1)
    steps = [np.linalg.norm(points[j + 1] - points[j]) for j in range(lo, hi)]
    return float(max(steps)) if steps else 0.0


def _isotropy_match(rep, v0, d_left, d_right, tol_iso_abs):
    """Best derivative match over elements fixing v0 within tol_iso_abs.

    Returns (gap, element index, matched vector); the scan preserves parent
    element indices so annotations refer to the original group.
    """
    mask = isotropy_mask(rep, v0, tol_iso_abs)
    idx = np.flatnonzero(mask)
    images = np.stack([rep.act_element(i, d_right) for i in idx])
    dist = np.linalg.norm(images - d_left, axis=1)
    best = int(np.argmin(dist))
    return float(dist[best]), int(idx[best]), images[best]


def repair_differentiable(
    rep: FiniteGroupRep,
    omap: OrbitMap,
    curve: SampledCurve,
    lift: SampledLift,
    tol_zero: float = DEFAULT_TOL_ZERO,
    tol_deriv: float = DEFAULT_TOL_DERIV,
    tol_iso: float | None = None,
) -> SampledLift:
    """Make a continuous lift differentiable across its singular instants.

    At each isolated zero and at each interior kink (one-sided derivative
    estimates disagreeing beyond tolerance) the one-sided derivatives are
    checked to lie in a common orbit, and the element of the local isotropy
    group best matching them is applied to the whole right-hand branch.  On
    accumulation-like zero runs the lift stays 0 and the outward edge
    derivatives are recorded.
    """
    _check_dims(rep, omap, curve)
    resid = _max_residual(omap, curve, lift.points)
    if resid > lift.residual_tol:
        raise ResidualExceeded(f"input lift violates its residual contract ({resid:.3e} > {lift.residual_tol:.3e})")

    grid = curve.grid
    m = curve.n_samples
    points = lift.points.copy()
    zero_set = detect_zero_set(curve, tol_zero)
    events: list[SingularEvent] = []

    # zero runs, left to right
    for (s, e), accum in zip(zero_set.intervals, zero_set.accumulation_flags):
        instant = 0.5 * (grid[s] + grid[e])
        d_left = d_right = None
        if s > 0:
            d_left = quotient_limit(grid, points, s, instant, side=-1)
        if e < m - 1:
            d_right = quotient_limit(grid, points, e, instant, side=+1)
        if accum or d_left is None or d_right is None:
            kind = KIND_ACCUMULATION if accum else KIND_ENDPOINT
            gap = max(
                float(np.linalg.norm(d)) for d in (d_left, d_right) if d is not None
            ) if (d_left is not None or d_right is not None) else 0.0
            events.append(
                SingularEvent(float(instant), kind, d_left, d_right, None, gap, None)
            )
            continue
        orbit_gap, g_idx, matched = _best_full_group(rep, d_left, d_right)
        tol_abs = tol_deriv * (1.0 + float(np.linalg.norm(d_left)))
        if orbit_gap > tol_abs:
            raise OrbitMismatch(
                f"one-sided derivatives at t={instant:.6g} are {orbit_gap:.3e} apart over the orbit "
                f"(tolerance {tol_abs:.3e}); data is not consistent with a sufficiently "
                "differentiable curve in the orbit space"
            )
        # the lift vanishes on the run, so the whole group is isotropy here
        for k in range(e + 1, m):
            points[k] = rep.act_element(g_idx, points[k])
        d_right_new = quotient_limit(grid, points, e, instant, side=+1)
        events.append(
            SingularEvent(
                float(instant),
                KIND_ZERO,
                d_left,
                d_right_new,
                g_idx,
                float(np.linalg.norm(d_left - d_right_new)),
                orbit_gap,
            )
        )

    # kink scan over the open intervals
    for start, end in zero_set.open_intervals():
        length = end - start + 1
        if length < 2 * STENCIL:
            continue
        seg = slice(start, end + 1)
        idx_m, d_minus = batched_one_sided(grid[seg], points[seg], side=-1)
        idx_p, d_plus = batched_one_sided(grid[seg], points[seg], side=+1)
        # align: indices with both estimates
        common = np.intersect1d(idx_m, idx_p)
        dm = d_minus[np.searchsorted(idx_m, common)]
        dp = d_plus[np.searchsorted(idx_p, common)]
        gaps = np.linalg.norm(dm - dp, axis=1)
        tol_line = tol_deriv * (1.0 + np.linalg.norm(dm, axis=1))
        flagged = np.flatnonzero(gaps > tol_line)
        if not len(flagged):
            continue
        # cluster neighboring flags; keep the worst sample of each cluster
        clusters = np.split(flagged, np.flatnonzero(np.diff(flagged) > STENCIL) + 1)
        for cluster in clusters:
            j = cluster[int(np.argmax(gaps[cluster]))]
            k0 = start + int(common[j])
            d_l = one_sided_derivative(grid, points, k0, side=-1)
            d_r = one_sided_derivative(grid, points, k0, side=+1)
            gap_now = float(np.linalg.norm(d_l - d_r))
            tol_abs = tol_deriv * (1.0 + float(np.linalg.norm(d_l)))
            if gap_now <= tol_abs:
                continue
            v0 = points[k0]
            orbit_gap, _, _ = _best_full_group(rep, d_l, d_r)
            if orbit_gap > tol_abs:
                raise OrbitMismatch(
                    f"one-sided derivatives at t={grid[k0]:.6g} are {orbit_gap:.3e} apart over the orbit "
                    f"(tolerance {tol_abs:.3e})"
                )
            if tol_iso is not None:
                tol_iso_abs = tol_iso
            else:
                # the collision instant may fall between samples, so allow the
                # isotropy query a radius of one local lift step
                tol_iso_abs = max(1e-9 * (1.0 + float(np.linalg.norm(v0))), 2.0 * _local_step_scale(points, k0))
            gap_iso, g_idx, _ = _isotropy_match(rep, v0, d_l, d_r, tol_iso_abs)
            if gap_iso > tol_abs:
                raise IsotropyInsufficient(
                    f"at t={grid[k0]:.6g}: best isotropy match leaves gap {gap_iso:.3e} > {tol_abs:.3e} "
                    f"while the full group achieves {orbit_gap:.3e}; the zero-locating tolerance likely "
                    "clipped the true singular instant (isotropy radius used: "
                    f"{tol_iso_abs:.3e})"
                )
            for k in range(k0 + 1, m):
                points[k] = rep.act_element(g_idx, points[k])
            d_r_new = one_sided_derivative(grid, points, k0, side=+1)
            events.append(
                SingularEvent(
                    float(grid[k0]),
                    KIND_JUMP,
                    d_l,
                    d_r_new,
                    g_idx,
                    float(np.linalg.norm(d_l - d_r_new)),
                    orbit_gap,
                )
            )

    resid = _max_residual(omap, curve, points)
    if resid > lift.residual_tol:
        raise ResidualExceeded(f"repair broke the residual contract ({resid:.3e})")
    events.sort(key=lambda ev: ev.instant)
    log.info("repair recorded %d singular events", len(events))
    return SampledLift(grid, points, tuple(events), lift.residual_tol)


def _best_full_group(rep: FiniteGroupRep, d_left, d_right):
    gap, vec, idx = nearest_orbit_point(rep, np.asarray(d_right, float), np.asarray(d_left, float))
    return gap, idx, vec
