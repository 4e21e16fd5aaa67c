"""Conditional CDFs and inverse-transform sampling over unions of polytopes.

A :class:`Piece` is a polynomial restricted to disjoint convex regions, in
local coordinates ``y - offset``. Fixing a prefix ``y_1..y_{i-1}`` makes the
marginal density of ``y_i`` piecewise polynomial, with breakpoints at the
``y_i`` coordinates of the sliced regions' vertices. Each polynomial piece is
recovered exactly by Chebyshev interpolation at ``degree + 1`` nodes and
integrated in closed form, which gives an exact CDF table to bisect.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import Chebyshev

from .cubature import prepare_grundmann_moller
from .exceptions import GeometryError, ZeroConditionalMass
from .geometry import Polytope, _simplices_volumes, h_to_v, triangulate
from .polynomial import Polynomial

BREAK_TOL = 1e-12


def bisection_search(F, u, lo, hi, eps):
    """Smallest ``z`` (to within ``eps``) in ``[lo, hi]`` with ``F(z) >= u``.

    ``F`` must be nondecreasing. Returns ``(z_lo, z_hi)`` with
    ``F(z_lo) < u <= F(z_hi)`` wherever the endpoints allow it and
    ``z_hi - z_lo <= eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    lo, hi = float(lo), float(hi)
    while hi - lo > eps:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if F(mid) < u:
            lo = mid
        else:
            hi = mid
    return lo, hi


class Piece:
    """Polynomial ``poly`` on ``regions``, both in coordinates ``y - offset``."""

    def __init__(self, poly: Polynomial, regions, offset=None, lo=None, hi=None):
        self.poly = poly
        self.regions = list(regions)
        n = poly.n
        self.offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
        # ownership box in global coordinates, half-open on the upper side
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)
        self.closed_hi = np.ones(n, dtype=bool) if hi is None else np.zeros(n, dtype=bool)
        self._first = None

    @property
    def n(self):
        return self.poly.n

    def owns(self, prefix):
        """Whether the global prefix falls in this piece's (half-open) box."""
        if self.lo is None or not len(prefix):
            return True
        k = len(prefix)
        p = np.asarray(prefix, dtype=float)
        lo, hi, closed = self.lo[:k], self.hi[:k], self.closed_hi[:k]
        return bool(np.all(p >= lo) and np.all((p < hi) | (closed & (p <= hi))))

    def permuted(self, order):
        """The same piece with variables reordered so that new ``j`` is old ``order[j]``."""
        order = list(order)
        poly = Polynomial(self.poly.exponents[:, order], self.poly.coeffs, n=self.n)
        regions = [Polytope(R.A[:, order], R.b) for R in self.regions]
        out = Piece(poly, regions, self.offset[order],
                    None if self.lo is None else self.lo[order],
                    None if self.hi is None else self.hi[order])
        out.closed_hi = self.closed_hi[order]
        return out

    def table(self, prefix_local=()):
        """CDF table of the next coordinate given a local prefix."""
        if not len(prefix_local):
            if self._first is None:
                self._first = marginal_table(self.poly, self.regions, ())
            return self._first
        return marginal_table(self.poly, self.regions, prefix_local)


class CdfTable:
    """Exact piecewise-polynomial unnormalized CDF of one coordinate."""

    def __init__(self, intervals, antiderivs, masses):
        self.intervals = intervals
        self.antiderivs = antiderivs
        self.masses = np.asarray(masses, dtype=float)
        self.cum = np.concatenate([[0.0], np.cumsum(self.masses)])

    @property
    def total(self):
        return float(self.cum[-1])

    def mass_below(self, z):
        """Unnormalized mass of ``y_i <= z``."""
        out = 0.0
        for (a, b), G, m, c0 in zip(self.intervals, self.antiderivs, self.masses, self.cum):
            if z >= b:
                out = c0 + m
            elif z > a:
                out = c0 + min(max(G(z), 0.0), m)
                break
            else:
                break
        return float(out)

    def cdf(self, z):
        t = self.total
        return 0.0 if t <= 0 else min(max(self.mass_below(z) / t, 0.0), 1.0)

    def inverse(self, u, eps):
        """``(z, (a, b))``: the ``u``-quantile to within ``eps`` and its piece."""
        target = u * self.total
        live = np.flatnonzero(self.masses > 0)
        if not live.size:
            raise ZeroConditionalMass("conditional slice carries no mass")
        k = live[np.searchsorted(self.cum[live + 1], target, side="left").clip(0, live.size - 1)]
        (a, b), G = self.intervals[k], self.antiderivs[k]
        rest = target - self.cum[k]
        lo, hi = bisection_search(lambda z: G(z), rest, a, b, eps)
        return 0.5 * (lo + hi), (a, b)


def _interval(A, b):
    """Feasible interval of a one-dimensional polytope ``A x <= b``."""
    a = A[:, 0]
    hi = np.min(b[a > 0] / a[a > 0]) if np.any(a > 0) else np.inf
    lo = np.max(b[a < 0] / a[a < 0]) if np.any(a < 0) else -np.inf
    if np.any((a == 0) & (b < 0)):
        return None
    return lo, hi


def _sliced(regions, prefix):
    fixed = {j: float(v) for j, v in enumerate(prefix)}
    out = []
    for R in regions:
        P = R.slice(fixed) if fixed else R
        if P is None:
            continue
        if P.dim == 1:
            iv = _interval(P.A, P.b)
            if iv is None or not iv[1] - iv[0] > BREAK_TOL * (1 + abs(iv[0])):
                continue
            out.append((P, iv[0], iv[1], np.array(iv)))
        else:
            try:
                V = h_to_v(P, check_bounded=False).vertices
            except GeometryError:
                continue
            out.append((P, V[:, 0].min(), V[:, 0].max(), V[:, 0]))
    return out


def _line_integrals(poly, prefix, P, t):
    """``int q(prefix, t, y) dy`` over the ``y`` interval of ``P`` at each ``t``."""
    A, b = P.A, P.b
    up = A[:, 1] > 0
    down = A[:, 1] < 0
    rhs = b[None, :] - A[None, :, 0] * t[:, None]
    hi = np.min(rhs[:, up] / A[up, 1], axis=1) if np.any(up) else np.full(t.size, np.inf)
    lo = np.max(rhs[:, down] / A[down, 1], axis=1) if np.any(down) else np.full(t.size, -np.inf)
    width = np.clip(hi - lo, 0.0, None)
    k = poly.degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(k)
    Y = lo[:, None] + 0.5 * width[:, None] * (x[None, :] + 1.0)
    pts = np.empty((t.size * k, len(prefix) + 2))
    pts[:, :len(prefix)] = prefix
    pts[:, len(prefix)] = np.repeat(t, k)
    pts[:, len(prefix) + 1] = Y.reshape(-1)
    vals = poly.evaluate(pts).reshape(t.size, k)
    return 0.5 * width * (vals @ w)


def _section_integral(poly, prefix, P, t):
    """Integral over the ``(d-1)``-dimensional section of ``P`` at first coordinate ``t``."""
    Q = P.slice({0: float(t)})
    if Q is None:
        return 0.0
    try:
        S = triangulate(h_to_v(Q, check_bounded=False), return_array=True)
    except GeometryError:
        return 0.0
    rule = prepare_grundmann_moller(poly.degree, Q.dim)
    vols = _simplices_volumes(S)
    X = np.einsum("pv,kvn->kpn", rule.points, S).reshape(-1, Q.dim)
    head = np.tile(np.append(prefix, t), (X.shape[0], 1))
    vals = poly.evaluate(np.hstack([head, X])).reshape(len(S), -1)
    return float(np.sum(vols * (vals @ rule.weights)))


def _density_at(poly, prefix, entries, t, d):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if d == 1:
        pts = np.empty((t.size, len(prefix) + 1))
        pts[:, :len(prefix)] = prefix
        pts[:, -1] = t
        return poly.evaluate(pts) * len(entries)
    out = np.zeros(t.size)
    for P, *_ in entries:
        if d == 2:
            out += _line_integrals(poly, prefix, P, t)
        else:
            out += np.array([_section_integral(poly, prefix, P, ti) for ti in t])
    return out


def marginal_table(poly: Polynomial, regions, prefix) -> CdfTable:
    """Unnormalized CDF of coordinate ``len(prefix)`` given the prefix."""
    prefix = np.asarray(prefix, dtype=float).reshape(-1)
    d = poly.n - prefix.size
    entries = _sliced(regions, prefix)
    if not entries:
        return CdfTable([], [], [])
    breaks = np.sort(np.concatenate([e[3] for e in entries]))
    scale = 1.0 + np.max(np.abs(breaks))
    keep = np.concatenate([[True], np.diff(breaks) > BREAK_TOL * scale])
    breaks = breaks[keep]
    degree = poly.degree + d - 1
    intervals, antiderivs, masses = [], [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        tol = BREAK_TOL * scale
        active = [e for e in entries if e[1] <= a + tol and e[2] >= b - tol]
        if not active:
            continue
        g = Chebyshev.interpolate(lambda t: _density_at(poly, prefix, active, t, d), degree, domain=[a, b])
        G = g.integ()
        G = G - G(a)
        intervals.append((float(a), float(b)))
        antiderivs.append(G)
        masses.append(max(float(G(b)), 0.0))
    return CdfTable(intervals, antiderivs, masses)
