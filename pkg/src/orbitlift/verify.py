"""Verification and synthesis harness.

Residual and smoothness diagnostics for lifts, orbit checks on one-sided
derivatives, an accumulation-cluster diagnostic for interval endpoints, and
seeded scrambled ground-truth generators for round-trip testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._derivatives import extrapolate_to_zero
from .errors import WindowTooSmall
from .flatness import SampledCurve
from .group import FiniteGroupRep, load_group_spec, nearest_orbit_point
from .invariants import OrbitMap, eval_orbit_map_many, from_generator_spec, symmetric_orbit_map
from .lifter import (
    DEFAULT_TOL_DERIV,
    KIND_JUMP,
    KIND_ZERO,
    SampledLift,
    ZeroSet,
    detect_zero_set,
)

SCHEMA_VERSION = 1
RNG_NAME = "pcg64"  # numpy default_rng; recorded in reports for reproducibility
DEFAULT_TOL_CLUSTER = 0.05


def residual_report(omap: OrbitMap, curve: SampledCurve, lift: SampledLift) -> float:
    """max_k ||sigma(points[k]) - values[k]||_inf."""
    return float(np.abs(eval_orbit_map_many(omap, lift.points) - curve.values).max())


def derivative_orbit_gap(rep: FiniteGroupRep, d_left, d_right) -> tuple[float, int]:
    """min_g ||d_left - g.d_right|| and the minimizing element index."""
    gap, _, idx = nearest_orbit_point(rep, np.asarray(d_right, dtype=float), np.asarray(d_left, dtype=float))
    return gap, idx


def accumulation_cluster_check(rep: FiniteGroupRep, gamma_samples, tol_cluster: float) -> tuple[bool, np.ndarray]:
    """Whether the tail of a quotient curve settles on a single orbit point.

    For a finite group a converging cluster must be one point; the check
    takes the last third of the samples and asks that they all sit within
    tol_cluster of the orbit point of the final sample closest to the tail's
    first sample.  Returns the verdict and that representative point.
    """
    samples = np.asarray(gamma_samples, dtype=float)
    if samples.ndim != 2 or len(samples) < 5:
        raise ValueError("need at least 5 quotient samples")
    tail = samples[-max(2, len(samples) // 3) :]
    _, representative, _ = nearest_orbit_point(rep, samples[-1], tail[0])
    dists = np.linalg.norm(tail - representative, axis=1)
    return bool(dists.max() <= tol_cluster), representative


@dataclass(frozen=True)
class ProbeReport:
    """Convergence table of one-sided difference quotients at an instant."""

    instant: float
    spans: np.ndarray
    quotients_left: np.ndarray
    quotients_right: np.ndarray
    limit_left: np.ndarray
    limit_right: np.ndarray
    gap: float

    def to_dict(self) -> dict:
        return {
            "instant": self.instant,
            "spans": [float(s) for s in self.spans],
            "quotients_left": self.quotients_left.tolist(),
            "quotients_right": self.quotients_right.tolist(),
            "limit_left": self.limit_left.tolist(),
            "limit_right": self.limit_right.tolist(),
            "gap": self.gap,
        }


def differentiability_probe(
    lift: SampledLift, t0: float, max_halvings: int = 3, coarsest_step: int | None = None
) -> ProbeReport:
    """One-sided difference quotients at geometrically shrinking spans.

    Spans are ``coarsest_step / 2^j`` grid steps for j = 0..max_halvings
    (default coarsest: 2^max_halvings steps, so the finest span is one
    step).  The quotient tables are extrapolated to span 0 and the gap
    between the two one-sided limits is reported.
    """
    grid = lift.grid
    k0 = int(np.argmin(np.abs(grid - t0)))
    if abs(grid[k0] - t0) > 1e-9 * (1.0 + abs(t0)):
        raise ValueError(f"t0={t0} is not a grid instant")
    if coarsest_step is None:
        coarsest_step = 2**max_halvings
    offsets = sorted({max(1, coarsest_step // 2**j) for j in range(max_halvings + 1)}, reverse=True)
    if k0 - offsets[0] < 0 or k0 + offsets[0] >= len(grid):
        raise WindowTooSmall(f"probe needs {offsets[0]} samples on both sides of index {k0}")
    base = lift.points[k0]
    q_right, q_left, spans = [], [], []
    for off in offsets:
        spans.append(grid[k0 + off] - grid[k0])
        q_right.append((lift.points[k0 + off] - base) / (grid[k0 + off] - grid[k0]))
        q_left.append((lift.points[k0 - off] - base) / (grid[k0 - off] - grid[k0]))
    spans = np.asarray(spans)
    q_right = np.asarray(q_right)
    q_left = np.asarray(q_left)
    limit_right = extrapolate_to_zero(spans, q_right)
    limit_left = extrapolate_to_zero(spans, q_left)
    return ProbeReport(
        instant=float(grid[k0]),
        spans=spans,
        quotients_left=q_left,
        quotients_right=q_right,
        limit_left=limit_left,
        limit_right=limit_right,
        gap=float(np.linalg.norm(limit_right - limit_left)),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Description of a synthetic ground-truth lift.

    Each coordinate of the smooth truth is a polynomial plus a trigonometric
    polynomial: w_i(t) = sum_j poly[i][j] t^j + sum (a cos(f t) + b sin(f t))
    for (a, b, f) in trig[i].  ``group`` and ``map_spec`` follow the JSON
    conventions of the group and invariants modules.
    """

    group: dict
    poly_coeffs: tuple
    trig_terms: tuple
    grid: tuple  # (t_start, t_end, n_samples)
    seed: int
    map_spec: object = "symmetric"

    @staticmethod
    def from_dict(data: dict) -> "SynthSpec":
        allowed = {"schema_version", "group", "poly_coeffs", "trig_terms", "grid", "seed", "map_spec"}
        extra = set(data) - allowed
        if extra:
            raise ValueError(f"unknown keys in synth spec: {sorted(extra)}")
        if data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError("unsupported synth spec schema_version")
        return SynthSpec(
            group=data["group"],
            poly_coeffs=tuple(tuple(row) for row in data["poly_coeffs"]),
            trig_terms=tuple(tuple(tuple(term) for term in row) for row in data["trig_terms"]),
            grid=tuple(data["grid"]),
            seed=int(data["seed"]),
            map_spec=data.get("map_spec", "symmetric"),
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "group": self.group,
            "poly_coeffs": [list(row) for row in self.poly_coeffs],
            "trig_terms": [[list(term) for term in row] for row in self.trig_terms],
            "grid": list(self.grid),
            "seed": self.seed,
            "map_spec": self.map_spec,
        }


def _truth_points(spec: SynthSpec, grid: np.ndarray, dim: int) -> np.ndarray:
    if len(spec.poly_coeffs) != dim or len(spec.trig_terms) != dim:
        raise ValueError(f"spec coordinates do not match group dimension {dim}")
    w = np.zeros((len(grid), dim))
    for i in range(dim):
        coeffs = np.asarray(spec.poly_coeffs[i], dtype=float)
        if len(coeffs):
            w[:, i] += np.polynomial.polynomial.polyval(grid, coeffs)
        for a, b, freq in spec.trig_terms[i]:
            w[:, i] += a * np.cos(freq * grid) + b * np.sin(freq * grid)
    return w


def synthesize(spec: SynthSpec) -> tuple[SampledCurve, np.ndarray, SampledLift]:
    """Ground truth w(t_k), its invariant curve, and per-sample scrambled copies.

    The scramble applies an independent seeded-random group element at every
    sample; with a fixed seed the outputs are bit-identical across runs.
    """
    rep = load_group_spec(spec.group)
    omap = symmetric_orbit_map(rep.dim) if spec.map_spec == "symmetric" else from_generator_spec(spec.map_spec)
    t_start, t_end, n = spec.grid
    grid = np.linspace(float(t_start), float(t_end), int(n))
    truth = _truth_points(spec, grid, rep.dim)
    values = eval_orbit_map_many(omap, truth)
    curve = SampledCurve(grid, values, omap.degrees)

    rng = np.random.default_rng(spec.seed)
    g_idx = rng.integers(rep.order, size=len(grid))
    if rep.matrices is not None:
        scrambled = np.einsum("kij,kj->ki", rep.matrices[g_idx], truth)
    else:
        scrambled = np.take_along_axis(truth, np.asarray(rep.perms[g_idx], dtype=np.intp), axis=1)
    residual_tol = 1e-7 * (1.0 + float(np.abs(values).max()))
    lift = SampledLift(grid, truth, (), residual_tol)
    return curve, scrambled, lift


def compare_up_to_group(
    rep: FiniteGroupRep, lift_a: SampledLift, lift_b: SampledLift, per_interval: ZeroSet
) -> list[tuple[float, int]]:
    """Per open interval: min_g max_k ||a_k - g.b_k|| and the minimizing element.

    Exhaustive over dense element stacks; for virtual symmetric groups the
    candidate elements are taken from coordinate matchings at a few probe
    samples.
    """
    if lift_a.points.shape != lift_b.points.shape or np.abs(lift_a.grid - lift_b.grid).max() > 0:
        raise ValueError("lifts must share one grid")
    out = []
    for start, end in per_interval.open_intervals():
        a = lift_a.points[start : end + 1]
        b = lift_b.points[start : end + 1]
        if rep.matrices is not None:
            images = np.einsum("gij,kj->gki", rep.matrices, b)
            costs = np.linalg.norm(images - a[None], axis=2).max(axis=1)
            best = int(np.argmin(costs))
            out.append((float(costs[best]), best))
        else:
            probes = {0, len(a) // 2, len(a) - 1}
            cand: dict[int, np.ndarray] = {}
            for k in probes:
                _, _, idx = nearest_orbit_point(rep, b[k], a[k])
                cand[idx] = None
            best_gap, best_idx = np.inf, -1
            for idx in cand:
                moved = np.stack([rep.act_element(idx, row) for row in b])
                gap = float(np.linalg.norm(moved - a, axis=1).max())
                if gap < best_gap:
                    best_gap, best_idx = gap, idx
            out.append((best_gap, best_idx))
    return out


@dataclass(frozen=True)
class VerificationReport:
    """Aggregate verdict on a lift against its source curve.

    ``passed`` is the conjunction of the individual checks, each against the
    tolerance recorded in ``tolerances``.
    """

    max_residual: float
    continuity_modulus: tuple
    singular_events: tuple
    accumulation_diagnostics: tuple
    passed: bool
    tolerances: dict
    seed: int
    rng: str = RNG_NAME

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "max_residual": self.max_residual,
            "continuity_modulus": [list(entry) for entry in self.continuity_modulus],
            "singular_events": [ev if isinstance(ev, dict) else ev.to_dict() for ev in self.singular_events],
            "accumulation_diagnostics": [dict(d) for d in self.accumulation_diagnostics],
            "pass": self.passed,
            "tolerances": dict(self.tolerances),
            "seed": self.seed,
            "rng": self.rng,
        }


def _continuity_modulus(curve: SampledCurve, lift: SampledLift, top: int = 8) -> list[tuple[float, float]]:
    dw = np.linalg.norm(np.diff(lift.points, axis=0), axis=1)
    dy = np.abs(np.diff(curve.values, axis=0)).max(axis=1)
    # the norm coordinate has degree 2, so curve increments control squared steps
    ratio = dw / np.sqrt(np.maximum(dy, 1e-300))
    mids = 0.5 * (curve.grid[1:] + curve.grid[:-1])
    worst = np.argsort(ratio)[::-1][:top]
    worst = np.sort(worst)
    return [(float(mids[i]), float(ratio[i])) for i in worst]


def _accumulation_diagnostics(rep, curve, lift, zero_set, tol_cluster):
    diags = []
    grid = curve.grid
    m = curve.n_samples
    for (s, e), accum in zip(zero_set.intervals, zero_set.accumulation_flags):
        if not accum:
            continue
        entry = {
            "start": float(grid[s]),
            "end": float(grid[e]),
            "cluster_ok": True,
            "max_tail_deviation": 0.0,
        }
        checks = []
        for edge, direction in ((s, -1), (e, +1)):
            lo = edge + 2 * direction
            hi = edge + 13 * direction
            idx = np.arange(*((hi, lo, 1) if direction < 0 else (lo, hi + 1, 1)))
            idx = idx[(idx >= 0) & (idx < m)]
            if len(idx) < 5:
                continue
            tau = grid[idx] - grid[edge]
            gamma = lift.points[idx] / tau[:, None]
            if direction < 0:
                gamma = gamma[::-1]  # order samples toward the edge
            scale = 1.0 + float(np.abs(gamma[-max(2, len(gamma) // 3) :]).max())
            ok, _ = accumulation_cluster_check(rep, gamma, tol_cluster * scale)
            tail = gamma[-max(2, len(gamma) // 3) :]
            checks.append((ok, float(np.linalg.norm(tail - tail[-1], axis=1).max())))
        if checks:
            entry["cluster_ok"] = bool(all(ok for ok, _ in checks))
            entry["max_tail_deviation"] = float(max(dev for _, dev in checks))
        diags.append(entry)
    return diags


def verification_report(
    rep: FiniteGroupRep,
    omap: OrbitMap,
    curve: SampledCurve,
    lift: SampledLift,
    tol_deriv: float = DEFAULT_TOL_DERIV,
    tol_cluster: float = DEFAULT_TOL_CLUSTER,
    tol_zero: float = 1e-10,
    seed: int = 0,
) -> VerificationReport:
    """Run the full diagnostic battery on a lift and aggregate the verdict."""
    max_resid = residual_report(omap, curve, lift)
    ok_resid = max_resid <= lift.residual_tol

    events = []
    ok_events = True
    for ev in lift.annotations:
        events.append(ev.to_dict())
        if ev.kind in (KIND_ZERO, KIND_JUMP) and ev.derivative_gap is not None:
            scale = 1.0 + (float(np.linalg.norm(ev.left_derivative)) if ev.left_derivative is not None else 0.0)
            if ev.derivative_gap > tol_deriv * scale:
                ok_events = False

    zero_set = detect_zero_set(curve, tol_zero)
    diags = _accumulation_diagnostics(rep, curve, lift, zero_set, tol_cluster)
    ok_acc = all(d["cluster_ok"] for d in diags)

    tolerances = {
        "residual_tol": lift.residual_tol,
        "tol_deriv": tol_deriv,
        "tol_cluster": tol_cluster,
        "tol_zero": tol_zero,
    }
    return VerificationReport(
        max_residual=max_resid,
        continuity_modulus=tuple(_continuity_modulus(curve, lift)),
        singular_events=tuple(events),
        accumulation_diagnostics=tuple(diags),
        passed=bool(ok_resid and ok_events and ok_acc),
        tolerances=tolerances,
        seed=seed,
    )
