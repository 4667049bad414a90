"""Orbit maps built from homogeneous invariant polynomials.

The map sigma = (sigma_1, ..., sigma_n) sends a point of R^dim to the values
of a generating system of invariant polynomials; its first coordinate is
always the squared Euclidean norm.  For the symmetric-group system the fibers
are root multisets, recoverable by a companion-matrix eigenvalue solve.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, Inconsistent, MissingFiberOracle, NonHyperbolic
from .group import FiniteGroupRep

_EVAL_CHUNK = 1 << 20  # cap on points*terms*dim handled per evaluation block


@dataclass(frozen=True)
class SparsePolynomial:
    """A homogeneous polynomial on R^dim stored as (coefficient, exponent vector) terms."""

    dim: int
    coeffs: np.ndarray
    exponents: np.ndarray

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        exps = np.atleast_2d(np.asarray(self.exponents, dtype=np.int64))
        if exps.shape != (len(coeffs), self.dim):
            raise ValueError(f"exponents shape {exps.shape} does not match {len(coeffs)} terms in dim {self.dim}")
        if not np.isfinite(coeffs).all():
            raise ValueError("coefficients must be finite")
        if (exps < 0).any():
            raise ValueError("exponents must be non-negative")
        totals = exps.sum(axis=1)
        if len(set(totals.tolist())) != 1:
            raise ValueError("polynomial is not homogeneous")
        if len({tuple(row) for row in exps.tolist()}) != len(coeffs):
            raise ValueError("duplicate exponent vectors")
        coeffs.flags.writeable = False
        exps.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return int(self.exponents[0].sum())

    def __call__(self, points) -> np.ndarray:
        """Evaluate at one point (dim,) or a batch (..., dim)."""
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        pts = points.reshape(-1, self.dim)
        nterms = len(self.coeffs)
        rows_per_block = max(1, _EVAL_CHUNK // max(1, nterms * self.dim))
        out = np.empty(len(pts))
        for start in range(0, len(pts), rows_per_block):
            block = pts[start : start + rows_per_block]
            monos = (block[:, None, :] ** self.exponents[None, :, :]).prod(axis=-1)
            out[start : start + rows_per_block] = monos @ self.coeffs
        return out[0] if single else out.reshape(points.shape[:-1])


def squared_norm_polynomial(dim: int) -> SparsePolynomial:
    return SparsePolynomial(dim, np.ones(dim), 2 * np.eye(dim, dtype=np.int64))


@dataclass(frozen=True)
class OrbitMap:
    """An ordered system of homogeneous invariant generators with their degrees.

    The first generator must be the squared norm (this is checked by random
    evaluation).  ``symmetric_n`` is set when the system is the built-in one
    for S_n, which unlocks closed-form fiber solving.
    """

    dim: int
    generators: tuple[SparsePolynomial, ...]
    degrees: tuple[int, ...]
    symmetric_n: int | None = None

    def __post_init__(self):
        gens = tuple(self.generators)
        degrees = tuple(int(d) for d in self.degrees)
        if len(gens) != len(degrees) or not gens:
            raise ValueError("generators and degrees must align and be non-empty")
        for g, d in zip(gens, degrees):
            if g.dim != self.dim:
                raise DimensionMismatch(f"generator dim {g.dim} != map dim {self.dim}")
            if g.degree != d or d < 1:
                raise ValueError(f"degree list entry {d} does not match generator degree {g.degree}")
        rng = np.random.default_rng(0xF1E5)
        probes = rng.standard_normal((2 * self.dim, self.dim))
        vals = gens[0](probes)
        if np.abs(vals - (probes**2).sum(axis=1)).max() > 1e-9 * (1 + np.abs(vals).max()):
            raise ValueError("first generator must be the squared Euclidean norm")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "degrees", degrees)

    @property
    def n_invariants(self) -> int:
        return len(self.generators)


def eval_orbit_map(omap: OrbitMap, v) -> np.ndarray:
    """sigma(v) by direct sparse evaluation; component 0 is ||v||^2."""
    v = np.asarray(v, dtype=float)
    if v.shape != (omap.dim,):
        raise DimensionMismatch(f"point has shape {v.shape}, expected ({omap.dim},)")
    return np.array([g(v) for g in omap.generators])


def eval_orbit_map_many(omap: OrbitMap, points) -> np.ndarray:
    """sigma over a batch of points, shape (m, n_invariants)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != omap.dim:
        raise DimensionMismatch(f"points have shape {points.shape}, expected (m, {omap.dim})")
    return np.column_stack([g(points) for g in omap.generators])


def symmetric_orbit_map(n: int) -> OrbitMap:
    """The system (q, e_1, ..., e_n) on R^n: squared norm plus elementary symmetric polynomials.

    The redundant q is prepended so that the first generator is the norm;
    the degree list is (2, 1, 2, ..., n).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gens = [squared_norm_polynomial(n)]
    for k in range(1, n + 1):
        combos = list(itertools.combinations(range(n), k))
        exps = np.zeros((len(combos), n), dtype=np.int64)
        for row, combo in enumerate(combos):
            exps[row, list(combo)] = 1
        gens.append(SparsePolynomial(n, np.ones(len(combos)), exps))
    return OrbitMap(n, tuple(gens), (2,) + tuple(range(1, n + 1)), symmetric_n=n)


def check_invariance(omap: OrbitMap, rep: FiniteGroupRep, trial_points: int = 1000, rng_seed: int = 0) -> float:
    """Max relative defect |sigma_i(g.v) - sigma_i(v)| / (1 + |sigma_i(v)|) over random (g, v)."""
    if omap.dim != rep.dim:
        raise DimensionMismatch(f"map dim {omap.dim} != rep dim {rep.dim}")
    rng = np.random.default_rng(rng_seed)
    gauss = rng.standard_normal((trial_points, omap.dim))
    radii = rng.random(trial_points) ** (1.0 / omap.dim)
    pts = gauss * (radii / np.linalg.norm(gauss, axis=1))[:, None]
    g_idx = rng.integers(rep.order, size=trial_points)
    if rep.matrices is not None:
        moved = np.einsum("tij,tj->ti", rep.matrices[g_idx], pts)
    else:
        moved = np.take_along_axis(pts, np.asarray(rep.perms[g_idx], dtype=np.intp), axis=1)
    base = eval_orbit_map_many(omap, pts)
    img = eval_orbit_map_many(omap, moved)
    return float((np.abs(img - base) / (1 + np.abs(base))).max())


def check_scaling(omap: OrbitMap, v, t: float) -> float:
    """Max_i |sigma_i(t v) - t^{d_i} sigma_i(v)|."""
    v = np.asarray(v, dtype=float)
    base = eval_orbit_map(omap, v)
    scaled = eval_orbit_map(omap, t * v)
    weights = np.array([float(t) ** d for d in omap.degrees])
    return float(np.abs(scaled - weights * base).max())


def newton_e_to_p(e) -> np.ndarray:
    """Power sums p_1..p_n from elementary symmetric values e_1..e_n."""
    e = np.asarray(e, dtype=float)
    n = len(e)
    p = np.empty(n)
    for k in range(1, n + 1):
        acc = (-1.0) ** (k - 1) * k * e[k - 1]
        for i in range(1, k):
            acc += (-1.0) ** (i - 1) * e[i - 1] * p[k - i - 1]
        p[k - 1] = acc
    return p


def newton_p_to_e(p) -> np.ndarray:
    """Elementary symmetric values e_1..e_n from power sums p_1..p_n."""
    p = np.asarray(p, dtype=float)
    n = len(p)
    e = np.empty(n)
    for k in range(1, n + 1):
        acc = 0.0
        for i in range(1, k + 1):
            prev = e[k - i - 1] if i < k else 1.0
            acc += (-1.0) ** (i - 1) * prev * p[i - 1]
        e[k - 1] = acc / k
    return e


def _invariant_scale(omap: OrbitMap, y: np.ndarray) -> float:
    # characteristic root magnitude implied by the invariant values
    mags = [abs(val) ** (1.0 / d) for val, d in zip(y, omap.degrees) if val != 0]
    return 1.0 + (max(mags) if mags else 0.0)


def roots_from_invariants(omap: OrbitMap, y, tol_im: float | None = None) -> np.ndarray:
    """The n real roots encoded by a symmetric-system invariant value, sorted ascending.

    Solves x^n - e_1 x^{n-1} + e_2 x^{n-2} - ... +- e_n by a balanced
    companion-matrix eigenvalue method.  Nearly-real conjugate pairs within
    tol_im (double roots split by rounding) are projected to their common
    real part; anything further from the real axis raises NonHyperbolic.
    A final consistency check compares sum(r^2) against the norm coordinate.
    """
    if omap.symmetric_n is None:
        raise ValueError("fiber solving is only built in for the symmetric system")
    n = omap.symmetric_n
    y = np.asarray(y, dtype=float)
    if y.shape != (n + 1,):
        raise DimensionMismatch(f"invariant value has shape {y.shape}, expected ({n + 1},)")
    scale = _invariant_scale(omap, y)
    tol = tol_im if tol_im is not None else 1e-7 * scale

    signs = (-1.0) ** np.arange(1, n + 1)
    coeffs = np.concatenate(([1.0], signs * y[1:]))
    raw = np.roots(coeffs)

    reals = [r.real for r in raw if r.imag == 0.0]
    complexes = sorted((r for r in raw if r.imag != 0.0), key=lambda z: (z.real, z.imag))
    if len(complexes) % 2 == 1:
        raise NonHyperbolic("unpaired complex root; value lies outside the image of the orbit map")
    for lo, hi in zip(complexes[0::2], complexes[1::2]):
        if abs(lo - np.conj(hi)) > 4 * tol or abs(lo.imag) > tol:
            raise NonHyperbolic(
                f"root {lo:.6g} has imaginary part beyond tol_im={tol:.3e}; "
                "value lies outside the image of the orbit map"
            )
        common = 0.5 * (lo.real + hi.real)
        reals.extend([common, common])

    roots = np.sort(np.asarray(reals))
    if abs((roots**2).sum() - y[0]) > 1e-6 * scale**2:
        raise Inconsistent(
            f"sum of squared roots {float((roots**2).sum()):.6g} does not match the norm coordinate {y[0]:.6g}"
        )
    return roots


def check_in_image(omap: OrbitMap, rep: FiniteGroupRep, y, fiber_point=None) -> float:
    """Residual ||sigma(v) - y||_inf for a solved or supplied fiber point v."""
    y = np.asarray(y, dtype=float)
    if rep is not None and rep.dim != omap.dim:
        raise DimensionMismatch(f"rep dim {rep.dim} != map dim {omap.dim}")
    if fiber_point is not None:
        v = np.asarray(fiber_point, dtype=float)
    elif omap.symmetric_n is not None:
        v = roots_from_invariants(omap, y)
    else:
        raise MissingFiberOracle("general generator systems need an explicit fiber_point")
    return float(np.abs(eval_orbit_map(omap, v) - y).max())


def from_generator_spec(spec: list) -> OrbitMap:
    """Build an orbit map from a JSON generator description.

    ``spec`` is a list of ``{"degree": d, "terms": [{"c": coeff, "e": [exponents]}]}``
    entries.  The squared norm is prepended automatically as the first
    generator, so the supplied list must not include it.
    """
    if not isinstance(spec, list) or not spec:
        raise ValueError("generator spec must be a non-empty list")
    dims = set()
    polys = []
    degrees = []
    for entry in spec:
        extra = set(entry) - {"degree", "terms"}
        if extra:
            raise ValueError(f"unknown keys in generator entry: {sorted(extra)}")
        terms = entry["terms"]
        coeffs = [float(t["c"]) for t in terms]
        exps = [list(map(int, t["e"])) for t in terms]
        for t in terms:
            if set(t) - {"c", "e"}:
                raise ValueError("generator terms must have exactly the keys 'c' and 'e'")
        dims.update(len(e) for e in exps)
        if len(dims) != 1:
            raise ValueError("inconsistent exponent vector lengths")
        dim = dims.pop()
        dims.add(dim)
        poly = SparsePolynomial(dim, np.array(coeffs), np.array(exps, dtype=np.int64))
        if poly.degree != int(entry["degree"]):
            raise ValueError(f"declared degree {entry['degree']} does not match terms (degree {poly.degree})")
        polys.append(poly)
        degrees.append(poly.degree)
    dim = dims.pop()
    gens = (squared_norm_polynomial(dim), *polys)
    return OrbitMap(dim, gens, (2, *degrees))
