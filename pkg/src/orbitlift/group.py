"""Finite orthogonal matrix groups.

Groups are given by explicit real matrices acting on R^dim.  Small groups
store a dense ``(order, dim, dim)`` stack; large symmetric groups store index
permutations and materialize matrices on demand.  Element 0 is always the
identity, and all values are immutable after construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotOrthogonal, OrderExceeded

TOL_ORTH = 1e-12     # per-entry orthogonality / dedup tolerance
TOL_ISO = 1e-9       # default isotropy tolerance (looser: queried on noisy fiber points)
_QUANT = 1e-8        # quantization step of the closure hash
_DENSE_MAX_N = 7     # symmetric groups up to S_7 are stored densely
_SYMMETRIC_CAP = 10  # default cap: n! with n <= 10
_CHUNK = 1 << 16     # block size for scans over large virtual groups


def _as_square(mat) -> np.ndarray:
    mat = np.array(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NotOrthogonal(f"expected a square matrix, got shape {mat.shape}")
    return mat


def check_orthogonal(mat, tol_orth: float = TOL_ORTH) -> np.ndarray:
    """Validate M^T M = I entrywise within tol_orth and return M as an array."""
    mat = _as_square(mat)
    defect = np.abs(mat.T @ mat - np.eye(len(mat))).max()
    if not np.isfinite(mat).all() or defect > tol_orth:
        raise NotOrthogonal(f"matrix is not orthogonal (defect {defect:.3e} > {tol_orth:.1e})")
    return mat


def _perm_rank(p) -> int:
    """Lexicographic rank of a permutation among all permutations of its length."""
    p = list(int(x) for x in p)
    n = len(p)
    rank = 0
    for i in range(n):
        smaller = sum(1 for j in range(i + 1, n) if p[j] < p[i])
        rank += smaller * math.factorial(n - 1 - i)
    return rank


def _all_permutations(n: int) -> np.ndarray:
    """All permutations of range(n) in lexicographic order, identity first."""
    if n == 1:
        return np.zeros((1, 1), dtype=np.int16)
    sub = _all_permutations(n - 1)
    m = sub.shape[0]
    out = np.empty((n * m, n), dtype=np.int16)
    for first in range(n):
        block = out[first * m : (first + 1) * m]
        block[:, 0] = first
        block[:, 1:] = sub + (sub >= first)  # relabel to skip `first`
    return out


@dataclass(frozen=True)
class FiniteGroupRep:
    """A finite subgroup of O(dim) with explicit elements.

    Exactly one of ``matrices`` (dense stack) and ``perms`` (coordinate
    permutations, acting by (g.v)[i] = v[p[i]]) is set.  ``full_symmetric``
    marks a permutation store that covers the whole symmetric group, which
    enables sorting-based nearest-orbit matching.
    """

    dim: int
    matrices: np.ndarray | None
    perms: np.ndarray | None
    generator_indices: tuple[int, ...]
    full_symmetric: bool = False

    def __post_init__(self):
        if (self.matrices is None) == (self.perms is None):
            raise ValueError("exactly one of matrices / perms must be given")
        if self.matrices is not None:
            mats = np.ascontiguousarray(self.matrices, dtype=float)
            if mats.ndim != 3 or mats.shape[1:] != (self.dim, self.dim):
                raise ValueError(f"bad matrix stack shape {mats.shape}")
            if np.abs(mats[0] - np.eye(self.dim)).max() > TOL_ORTH:
                raise ValueError("element 0 must be the identity")
            gram = np.einsum("gji,gjk->gik", mats, mats)
            defect = np.abs(gram - np.eye(self.dim)).max()
            if defect > 1e-10:
                raise NotOrthogonal(f"non-orthogonal element in stack (defect {defect:.3e})")
            mats.flags.writeable = False
            object.__setattr__(self, "matrices", mats)
        else:
            perms = np.ascontiguousarray(self.perms)
            if perms.ndim != 2 or perms.shape[1] != self.dim:
                raise ValueError(f"bad permutation array shape {perms.shape}")
            if not np.array_equal(perms[0], np.arange(self.dim)):
                raise ValueError("element 0 must be the identity permutation")
            perms.flags.writeable = False
            object.__setattr__(self, "perms", perms)
        object.__setattr__(self, "generator_indices", tuple(int(i) for i in self.generator_indices))

    @property
    def order(self) -> int:
        store = self.matrices if self.matrices is not None else self.perms
        return store.shape[0]

    @property
    def is_virtual(self) -> bool:
        return self.matrices is None

    def element(self, i: int) -> np.ndarray:
        """Materialize element i as a dim x dim orthogonal matrix."""
        if self.matrices is not None:
            return self.matrices[i]
        return np.eye(self.dim)[np.asarray(self.perms[i], dtype=np.intp)]

    def act_element(self, i: int, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.matrices is not None:
            return self.matrices[i] @ v
        return v[np.asarray(self.perms[i], dtype=np.intp)]

    def act(self, v: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Images g.v for elements in [start, stop), shape (count, dim)."""
        v = np.asarray(v, dtype=float)
        if self.matrices is not None:
            return self.matrices[start:stop] @ v
        return v[np.asarray(self.perms[start:stop], dtype=np.intp)]

    def subgroup(self, indices) -> FiniteGroupRep:
        """Restriction to the given element indices (must contain 0 and be closed)."""
        indices = np.asarray(indices, dtype=np.intp)
        if indices[0] != 0:
            raise ValueError("subgroup selection must keep the identity at position 0")
        gens = tuple(range(1, len(indices))) if len(indices) > 1 else ()
        if self.matrices is not None:
            return FiniteGroupRep(self.dim, self.matrices[indices], None, gens)
        sub = self.perms[indices]
        full = sub.shape[0] == math.factorial(self.dim)
        return FiniteGroupRep(self.dim, None, sub, gens, full_symmetric=full)


@dataclass(frozen=True)
class Subspace:
    """A linear subspace of R^dim given by an orthonormal basis (rows), possibly empty."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if basis.size == 0:
            basis = basis.reshape(0, basis.shape[-1] if basis.ndim == 2 else 0)
        gram = basis @ basis.T
        if gram.size and np.abs(gram - np.eye(len(basis))).max() > 1e-10:
            raise ValueError("basis is not orthonormal")
        basis.flags.writeable = False
        object.__setattr__(self, "basis", basis)

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.dimension == 0:
            return np.zeros_like(v)
        return self.basis.T @ (self.basis @ v)


class _QuantHash:
    """Dedup index over matrices, hashing entries quantized on two offset grids.

    Two matrices within _QUANT/4 of each other always share at least one key,
    so lookups survive the floating drift of long products.
    """

    def __init__(self):
        self._buckets: dict[bytes, list[int]] = {}

    @staticmethod
    def _keys(mat: np.ndarray):
        scaled = mat / _QUANT
        a = np.round(scaled).astype(np.int64).tobytes()
        b = np.round(scaled + 0.5).astype(np.int64).tobytes()
        return a + b"A", b + b"B"

    def find(self, mat: np.ndarray, elements: list[np.ndarray]) -> int | None:
        for key in self._keys(mat):
            for idx in self._buckets.get(key, ()):
                if np.abs(elements[idx] - mat).max() <= 0.5 * _QUANT:
                    return idx
        return None

    def insert(self, mat: np.ndarray, idx: int):
        for key in self._keys(mat):
            self._buckets.setdefault(key, []).append(idx)


def enumerate_group(generators, max_order: int, tol_orth: float = TOL_ORTH) -> FiniteGroupRep:
    """Breadth-first closure of a finite set of orthogonal generators.

    Raises OrderExceeded as soon as the closure grows past ``max_order``,
    which is the signal for an infinite (e.g. irrational rotation) or
    too-large group.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    gens = [check_orthogonal(g, tol_orth) for g in generators]
    if not gens:
        raise ValueError("need at least one generator")
    dim = gens[0].shape[0]
    if any(g.shape[0] != dim for g in gens):
        raise NotOrthogonal("generators have inconsistent dimensions")

    elements: list[np.ndarray] = [np.eye(dim)]
    index = _QuantHash()
    index.insert(elements[0], 0)
    queue = [0]
    while queue:
        i = queue.pop(0)
        for g in gens:
            cand = elements[i] @ g
            if index.find(cand, elements) is not None:
                continue
            if len(elements) + 1 > max_order:
                raise OrderExceeded(
                    f"closure exceeded max_order={max_order}; the generated group is too large or infinite"
                )
            index.insert(cand, len(elements))
            elements.append(cand)
            queue.append(len(elements) - 1)

    gen_idx = tuple(index.find(g, elements) for g in gens)
    return FiniteGroupRep(dim, np.stack(elements), None, gen_idx)


def symmetric_group_rep(n: int, cap: int = _SYMMETRIC_CAP) -> FiniteGroupRep:
    """The permutation representation of S_n on R^n.

    Up to n=7 the elements are dense permutation matrices; beyond that they
    are kept as index permutations and materialized on demand.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > cap:
        raise OrderExceeded(f"S_{n} has {math.factorial(n)} elements, above the cap of {cap}!")
    perms = _all_permutations(n)
    # indices of the adjacent transpositions (i, i+1) as a recorded generating set
    gen_idx = []
    for i in range(n - 1):
        p = list(range(n))
        p[i], p[i + 1] = p[i + 1], p[i]
        gen_idx.append(_perm_rank(p))
    if n <= _DENSE_MAX_N:
        mats = np.eye(n)[np.asarray(perms, dtype=np.intp)]
        return FiniteGroupRep(n, mats, None, tuple(gen_idx))
    return FiniteGroupRep(n, None, perms, tuple(gen_idx), full_symmetric=True)


def isotropy_subgroup(rep: FiniteGroupRep, v, tol_iso: float = TOL_ISO) -> FiniteGroupRep:
    """Subgroup of elements moving v by at most tol_iso (Euclidean norm)."""
    mask = isotropy_mask(rep, v, tol_iso)
    return rep.subgroup(np.flatnonzero(mask))


def isotropy_mask(rep: FiniteGroupRep, v, tol_iso: float = TOL_ISO) -> np.ndarray:
    """Boolean mask over rep's elements with ||g.v - v|| <= tol_iso."""
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("v must be finite")
    if tol_iso <= 0:
        raise ValueError("tol_iso must be positive")
    out = np.empty(rep.order, dtype=bool)
    for start in range(0, rep.order, _CHUNK):
        stop = min(start + _CHUNK, rep.order)
        diff = rep.act(v, start, stop) - v
        out[start:stop] = np.sqrt((diff * diff).sum(axis=1)) <= tol_iso
    return out


def reynolds_projector(rep: FiniteGroupRep) -> np.ndarray:
    """Group average P = (1/|G|) sum_g rho(g); the orthogonal projector onto the fixed subspace."""
    if rep.matrices is not None:
        return rep.matrices.mean(axis=0)
    n = rep.dim
    proj = np.empty((n, n))
    for i in range(n):
        proj[i] = np.bincount(np.asarray(rep.perms[:, i], dtype=np.intp), minlength=n)
    return proj / rep.order


def fixed_subspace(rep: FiniteGroupRep) -> Subspace:
    """Orthonormal basis of the space of vectors fixed by every element."""
    proj = reynolds_projector(rep)
    u, s, _ = np.linalg.svd(proj)
    rank = int((s > 1e-10).sum())
    return Subspace(u[:, :rank].T.copy())


def split_fixed(rep: FiniteGroupRep, v) -> tuple[np.ndarray, np.ndarray]:
    """Split v = v_fixed + v_prime with v_fixed in the fixed subspace and v_prime orthogonal to it."""
    v = np.asarray(v, dtype=float)
    v_fixed = reynolds_projector(rep) @ v
    return v_fixed, v - v_fixed


def orbit(rep: FiniteGroupRep, v, tol: float = 1e-8) -> np.ndarray:
    """All images g.v deduplicated within tol, in first-seen element order."""
    from scipy.spatial import cKDTree

    images = rep.act(np.asarray(v, dtype=float))
    if len(images) == 1:
        return images.copy()
    tree = cKDTree(images)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(images))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(images))])
    keep = np.flatnonzero(roots == np.arange(len(images)))
    return images[keep]


def nearest_orbit_point(rep: FiniteGroupRep, v, target) -> tuple[float, np.ndarray, int]:
    """min_g ||g.v - target||, the minimizing image, and the element index.

    Ties break to the smallest element index.  For full symmetric groups the
    minimizer is found by pairing sorted coordinates, which realizes the same
    minimum as exhaustive search.
    """
    v = np.asarray(v, dtype=float)
    target = np.asarray(target, dtype=float)
    if rep.is_virtual and rep.full_symmetric:
        sv = np.argsort(v, kind="stable")
        st = np.argsort(target, kind="stable")
        p = np.empty(rep.dim, dtype=np.intp)
        p[st] = sv
        image = v[p]
        gap = float(np.linalg.norm(image - target))
        return gap, image, _perm_rank(p)
    best = (np.inf, None, -1)
    for start in range(0, rep.order, _CHUNK):
        stop = min(start + _CHUNK, rep.order)
        images = rep.act(v, start, stop)
        d2 = ((images - target) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        if d2[i] < best[0]:
            best = (d2[i], images[i].copy(), start + i)
    return float(np.sqrt(best[0])), best[1], best[2]


def find_element(rep: FiniteGroupRep, mat, tol: float = 1e-8) -> int | None:
    """Index of the element matching the given matrix within tol, or None."""
    mat = _as_square(mat)
    for i in range(rep.order):
        if np.abs(rep.element(i) - mat).max() <= tol:
            return i
    return None


def load_group_spec(spec: dict) -> FiniteGroupRep:
    """Build a group from its JSON description.

    ``{"type": "symmetric", "n": 5}`` or
    ``{"type": "matrix", "dim": 2, "generators": [[[0,1],[1,0]]], "max_order": 1024}``.
    Unknown keys are rejected.
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValueError("group spec must be an object with a 'type' key")
    kind = spec["type"]
    if kind == "symmetric":
        extra = set(spec) - {"type", "n"}
        if extra:
            raise ValueError(f"unknown keys in group spec: {sorted(extra)}")
        return symmetric_group_rep(int(spec["n"]))
    if kind == "matrix":
        extra = set(spec) - {"type", "dim", "generators", "max_order"}
        if extra:
            raise ValueError(f"unknown keys in group spec: {sorted(extra)}")
        gens = [np.asarray(g, dtype=float) for g in spec["generators"]]
        dim = int(spec["dim"])
        if any(g.shape != (dim, dim) for g in gens):
            raise ValueError("generator shapes do not match 'dim'")
        return enumerate_group(gens, int(spec.get("max_order", 1024)))
    raise ValueError(f"unknown group type {kind!r}")
