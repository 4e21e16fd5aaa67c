"""Convex polytopes, vertex enumeration and simplicial decomposition."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .exceptions import (
    BadBarycentric,
    Degenerate,
    DimensionError,
    EmptyPolytope,
    ParseError,
    Unbounded,
)

TAU_FEAS = 1e-9
TAU_DUP = 1e-9
TAU_DEGEN = 1e-12
TAU_BARY = 1e-9


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Halfspace:
    """The closed halfspace ``normal . y <= offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _frozen(self.normal).reshape(-1)
        if normal.size < 1 or not np.any(normal != 0):
            raise ValueError("halfspace normal must have a nonzero entry")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.size


class Polytope:
    """Convex region ``{y | A y <= b}`` in H-description.

    Instances are immutable; ``A`` and ``b`` are read-only arrays.
    """

    __slots__ = ("A", "b")

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise DimensionError(f"{A.shape[0]} normals but {b.size} offsets")
        if A.shape[1] < 1:
            raise DimensionError("polytope dimension must be at least 1")
        if A.shape[0] and np.any(np.all(A == 0, axis=1)):
            raise ValueError("halfspace normal must have a nonzero entry")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def __setattr__(self, name, value):
        raise AttributeError("Polytope is immutable")

    @classmethod
    def from_halfspaces(cls, halfspaces):
        halfspaces = list(halfspaces)
        if not halfspaces:
            raise ValueError("at least one halfspace is required")
        dims = {h.dim for h in halfspaces}
        if len(dims) != 1:
            raise DimensionError(f"halfspaces of mixed dimension {sorted(dims)}")
        return cls([h.normal for h in halfspaces], [h.offset for h in halfspaces])

    @classmethod
    def from_box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def from_simplex(cls, vertices):
        """H-description of the simplex spanned by ``n + 1`` vertices."""
        V = np.asarray(vertices, dtype=float)
        n = V.shape[1]
        rows, offs = [], []
        for k in range(n + 1):
            face = np.delete(V, k, axis=0)
            if n == 1:
                normal = np.array([1.0])
            else:
                edges = face[1:] - face[0]
                # null vector of the face's edge matrix
                normal = np.linalg.svd(edges)[2][-1]
            off = normal @ face[0]
            if normal @ V[k] > off:
                normal, off = -normal, -off
            rows.append(normal)
            offs.append(off)
        return cls(rows, offs)

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def halfspaces(self):
        return [Halfspace(a, b) for a, b in zip(self.A, self.b)]

    def __len__(self):
        return self.A.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, halfspaces={len(self)})"

    def intersect(self, other):
        if other.dim != self.dim:
            raise DimensionError("cannot intersect polytopes of different dimension")
        return Polytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))

    def translate(self, offset):
        """The polytope shifted by ``-offset`` (coordinates ``y - offset``)."""
        offset = np.asarray(offset, dtype=float)
        return Polytope(self.A, self.b - self.A @ offset)

    def slice(self, fixed):
        """Fix coordinates ``{index: value}`` and return the section over the rest.

        Returns ``None`` when a constraint that loses all free coefficients is
        violated, i.e. the section is empty.
        """
        fixed_idx = sorted(fixed)
        free = [j for j in range(self.dim) if j not in fixed]
        vals = np.array([fixed[j] for j in fixed_idx], dtype=float)
        b = self.b - self.A[:, fixed_idx] @ vals if fixed_idx else self.b.copy()
        A = self.A[:, free]
        constant = np.all(np.abs(A) <= 1e-15, axis=1)
        if np.any(b[constant] < -TAU_FEAS * (1 + np.abs(self.b[constant]))):
            return None
        return Polytope(A[~constant], b[~constant]) if np.any(~constant) else None

    def contains(self, Y, tol=0.0):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return np.all(Y @ self.A.T <= self.b + tol * (1 + np.abs(self.b)), axis=1)

    def to_text(self):
        lines = []
        for a, b in zip(self.A, self.b):
            lines.append(" ".join(repr(float(x)) for x in a) + " <= " + repr(float(b)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows, offs = [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "<=" not in line:
                raise ParseError("expected 'a1 ... an <= b'", lineno, 1)
            lhs, rhs = line.split("<=", 1)
            try:
                a = [float(tok) for tok in lhs.split()]
                b = float(rhs.strip())
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", lineno, 1) from None
            if rows and len(a) != len(rows[0]):
                raise DimensionError(f"line {lineno}: expected {len(rows[0])} coefficients, got {len(a)}")
            if not a:
                raise ParseError("missing coefficients", lineno, 1)
            rows.append(a)
            offs.append(b)
        if not rows:
            raise ParseError("no halfspaces found", 1, 1)
        return cls(rows, offs)


@dataclass(frozen=True)
class Box:
    """Axis-aligned bounding box ``lo <= y <= hi``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lo).reshape(-1)
        hi = _frozen(self.hi).reshape(-1)
        if lo.shape != hi.shape or lo.size < 1:
            raise DimensionError("box bounds must be equal-length, nonempty vectors")
        if not np.all(hi > lo):
            raise ValueError("box must satisfy lo < hi in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_flat(cls, values):
        values = [float(v) for v in values]
        if len(values) % 2 or not values:
            raise DimensionError("box needs pairs 'lo hi' per dimension")
        return cls(values[0::2], values[1::2])

    @property
    def dim(self):
        return self.lo.size

    @property
    def widths(self):
        return self.hi - self.lo

    @property
    def volume(self):
        return float(np.prod(self.widths))

    def to_polytope(self):
        return Polytope.from_box(self.lo, self.hi)

    def flat(self):
        return [float(x) for pair in zip(self.lo, self.hi) for x in pair]

    def contains(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return np.all((Y >= self.lo) & (Y <= self.hi), axis=1)

    def drop(self, dims):
        keep = [j for j in range(self.dim) if j not in set(dims)]
        return Box(self.lo[keep], self.hi[keep])

    def intersect(self, other):
        return Box(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))


@dataclass(frozen=True)
class VertexSet:
    vertices: np.ndarray
    dim: int = field(default=0)

    def __post_init__(self):
        V = _frozen(self.vertices)
        if V.ndim != 2:
            raise DimensionError("vertices must form a 2-d array")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "dim", V.shape[1])

    def __len__(self):
        return self.vertices.shape[0]


@dataclass(frozen=True)
class Simplex:
    vertices: np.ndarray

    def __post_init__(self):
        V = _frozen(self.vertices)
        if V.ndim != 2 or V.shape[0] != V.shape[1] + 1:
            raise DimensionError(f"a simplex in R^n needs n+1 vertices, got shape {V.shape}")
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def volume(self):
        return simplex_volume(self)


def _normalized(A, b):
    norms = np.linalg.norm(A, axis=1)
    return A / norms[:, None], b / norms


def is_bounded(p: Polytope) -> bool:
    """Whether the recession cone ``{d | A d <= 0}`` is trivial.

    By Stiemke's alternative the cone is ``{0}`` iff ``A`` has full column
    rank and some strictly positive ``lam`` satisfies ``A^T lam = 0``.
    """
    A, _ = _normalized(p.A, p.b)
    m, n = A.shape
    if m <= n or np.linalg.matrix_rank(A) < n:
        return False
    res = linprog(
        np.ones(m), A_eq=A.T, b_eq=np.zeros(n), bounds=[(1.0, None)] * m, method="highs"
    )
    return res.status == 0


def interior_radius(A, b):
    """Radius of the largest ball inside ``{A y <= b}`` (capped at 1).

    The radius is signed: an empty system gives a negative value (minus the
    largest violation depth), and ``-inf`` only on solver failure.
    """
    A, b = _normalized(np.asarray(A, float), np.asarray(b, float))
    m, n = A.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((m, 1))])
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status == 2:
        return -math.inf
    if res.status != 0:
        # unbounded in y is impossible with t capped; anything else is numerical trouble
        return -math.inf
    return float(res.x[-1])


def _dedup(points, tol):
    kept = []
    for v in points:
        if not kept:
            kept.append(v)
            continue
        d = np.max(np.abs(np.asarray(kept) - v), axis=1)
        if np.min(d) > tol:
            kept.append(v)
    return np.asarray(kept)


def h_to_v(p: Polytope, check_bounded: bool = True, tau_feas: float = TAU_FEAS) -> VertexSet:
    """Extreme points of a bounded, full-dimensional polytope.

    Every ``n``-subset of halfspaces is solved as a square system and the
    feasible solutions are kept and de-duplicated.
    """
    n = p.dim
    if check_bounded and not is_bounded(p):
        raise Unbounded(f"{p!r} has a recession direction")
    A, b = _normalized(p.A, p.b)
    # drop repeated halfspaces
    key = np.round(np.hstack([A, b[:, None]]), 12)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    A, b = A[first], b[first]
    m = A.shape[0]
    if m < n + 1:
        raise Unbounded(f"{m} distinct halfspaces cannot bound a region in R^{n}")

    combos = np.array(list(itertools.combinations(range(m), n)), dtype=np.intp)
    rows = A[combos]
    rhs = b[combos]
    if n == 1:
        ok = np.abs(rows[:, 0, 0]) > TAU_DEGEN
        sols = np.where(ok, rhs[:, 0] / np.where(ok, rows[:, 0, 0], 1.0), 0.0)[:, None]
    else:
        dets = np.linalg.det(rows)
        ok = np.abs(dets) > TAU_DEGEN
        sols = np.zeros((len(combos), n))
        if np.any(ok):
            sols[ok] = np.linalg.solve(rows[ok], rhs[ok][..., None])[..., 0]
    sols = sols[ok]
    if sols.size:
        slack = b[None, :] - sols @ A.T
        feasible = np.all(slack >= -tau_feas * (1 + np.abs(b)[None, :]), axis=1)
        sols = sols[feasible]
    if sols.shape[0] == 0:
        raise EmptyPolytope(f"{p!r} has no vertices")
    scale = 1.0 + float(np.max(np.abs(sols)))
    V = _dedup(sols, TAU_DUP * scale)
    if V.shape[0] < n + 1 or np.linalg.matrix_rank(V[1:] - V[0], tol=1e-10 * scale) < n:
        raise Degenerate(f"{p!r} is not full-dimensional")
    return VertexSet(V)


def simplex_volume(s) -> float:
    V = s.vertices if isinstance(s, Simplex) else np.asarray(s, dtype=float)
    n = V.shape[1]
    return abs(float(np.linalg.det(V[1:] - V[0]))) / math.factorial(n)


def _simplices_volumes(S):
    n = S.shape[2]
    if n == 1:
        return np.abs(S[:, 1, 0] - S[:, 0, 0])
    return np.abs(np.linalg.det(S[:, 1:] - S[:, :1])) / math.factorial(n)


def _cone_triangulation(V):
    """Cone from the centroid over the triangulated hull facets."""
    hull = ConvexHull(V, qhull_options="Qt")
    c = V.mean(axis=0)
    return np.array([np.vstack([c, V[f]]) for f in hull.simplices])


def triangulate(v, return_array: bool = False):
    """Split ``conv(v)`` into simplices with disjoint interiors.

    Uses the Delaunay triangulation (lower hull of the points lifted to a
    paraboloid). If qhull fails or the simplex volumes do not add up to the
    hull volume, falls back to coning the centroid over the hull facets.
    """
    V = v.vertices if isinstance(v, VertexSet) else np.asarray(v, dtype=float)
    n = V.shape[1]
    if V.shape[0] < n + 1:
        raise Degenerate("need at least n+1 points to triangulate")
    scale = 1.0 + float(np.max(np.abs(V)))
    if n == 1:
        lo, hi = float(V.min()), float(V.max())
        if hi - lo <= TAU_DEGEN * scale:
            raise Degenerate("all points coincide")
        S = np.array([[[lo], [hi]]])
    else:
        if np.linalg.matrix_rank(V[1:] - V[0], tol=1e-10 * scale) < n:
            raise Degenerate("points are affinely dependent")
        try:
            tri = Delaunay(V)
            S = V[tri.simplices]
            vols = _simplices_volumes(S)
            total = ConvexHull(V).volume
            if abs(vols.sum() - total) > 1e-9 * max(total, 1e-300):
                raise QhullError("Delaunay volumes do not cover the hull")
        except QhullError:
            S = _cone_triangulation(V)
        vols = _simplices_volumes(S)
        # flat simplices from cospherical vertices carry no measure
        S = S[vols > TAU_DEGEN * scale**n]
    if return_array:
        return S
    return [Simplex(s) for s in S]


def map_from_unit_simplex(point_barycentric, s, tau_bary: float = TAU_BARY):
    """Affine image ``sum_k b_k v_k`` of barycentric coordinates on ``s``.

    Accepts a single ``(n+1,)`` vector or a ``(P, n+1)`` batch.
    """
    V = s.vertices if isinstance(s, Simplex) else np.asarray(s, dtype=float)
    bary = np.asarray(point_barycentric, dtype=float)
    if bary.shape[-1] != V.shape[0]:
        raise BadBarycentric(f"expected {V.shape[0]} barycentric coordinates, got {bary.shape[-1]}")
    if np.any(np.abs(bary.sum(axis=-1) - 1.0) > tau_bary) or np.any(bary < -tau_bary):
        raise BadBarycentric("barycentric coordinates must be nonnegative and sum to 1")
    return bary @ V


def barycentric_coordinates(y, s):
    V = s.vertices if isinstance(s, Simplex) else np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    T = (V[1:] - V[0]).T
    lam = np.linalg.solve(T, (y - V[0]).T).T
    return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
