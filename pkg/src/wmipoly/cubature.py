"""Grundmann-Moeller cubature on simplices and compensated summation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .exceptions import DegreeMismatch, DimensionError
from .geometry import Simplex, _simplices_volumes

DEFAULT_BATCH = 512


@dataclass(frozen=True)
class CubatureRule:
    """Points (barycentric, one row per point) and weights on the unit simplex.

    Weights are normalized to sum to one, so a rule integrates over a simplex
    of volume ``V`` as ``V * sum(w * f(points))``.
    """

    dim: int
    degree: int
    level: int
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.weights.size

    def to_text(self):
        lines = [f"# grundmann-moller dim={self.dim} degree={self.degree} level={self.level} points={len(self)}"]
        for r, w in zip(self.points, self.weights):
            lines.append(" ".join(repr(float(x)) for x in r) + " " + repr(float(w)))
        return "\n".join(lines) + "\n"


def _compositions(total, parts):
    """All tuples of ``parts`` nonnegative integers summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def gm_level(d: int) -> int:
    # rule of level s is exact through degree 2s + 1
    return max(0, math.ceil((d - 1) / 2))


@lru_cache(maxsize=None)
def prepare_grundmann_moller(d: int, n: int) -> CubatureRule:
    """Rule exact for all polynomials of total degree ``<= d`` on an n-simplex.

    Weights are computed in exact rational arithmetic, so no factorial
    overflows at any level or dimension.
    """
    if d < 0 or n < 1:
        raise ValueError("need degree >= 0 and dimension >= 1")
    s = gm_level(d)
    exact = 2 * s + 1
    points, weights = [], []
    for i in range(s + 1):
        denom = exact + n - 2 * i
        # n! converts the unit-simplex volume 1/n! to weights summing to one
        w = Fraction((-1) ** i * denom**exact * math.factorial(n),
                     2 ** (2 * s) * math.factorial(i) * math.factorial(exact + n - i))
        for beta in _compositions(s - i, n + 1):
            points.append([(2 * bj + 1) / denom for bj in beta])
            weights.append(float(w))
    rule = CubatureRule(
        dim=n,
        degree=exact,
        level=s,
        points=np.array(points),
        weights=np.array(weights),
    )
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


def stable_sum(values, axis=None):
    """Sum splitting positive and negative parts.

    Each part is sorted by ascending magnitude and accumulated with
    Neumaier compensation; the two partial sums and their compensation
    terms are combined at the end. With ``axis`` the reduction is
    vectorized along that axis.
    """
    x = np.asarray(values, dtype=float)
    if axis is None:
        x = x.reshape(-1)
        axis = 0
    x = np.moveaxis(x, axis, 0)
    if x.shape[0] == 0:
        return 0.0 if x.ndim == 1 else np.zeros(x.shape[1:])
    pos = np.sort(np.where(x > 0, x, 0.0), axis=0)
    neg = -np.sort(np.where(x < 0, -x, 0.0), axis=0)
    sp, cp = _neumaier(pos)
    sn, cn = _neumaier(neg)
    nan = np.isnan(x).any(axis=0)
    out = (sp + sn) + (cp + cn)
    out = np.where(nan, np.nan, out)
    return float(out) if np.ndim(out) == 0 else out


def _neumaier(x):
    s = np.zeros(x.shape[1:])
    c = np.zeros(x.shape[1:])
    for row in x:
        t = s + row
        big = np.abs(s) >= np.abs(row)
        c += np.where(big, (s - t) + row, (row - t) + s)
        s = t
    return s, c


def integrate_on_simplex(q, s, rule: CubatureRule, batch_size: int = DEFAULT_BATCH) -> float:
    """Cubature of polynomial ``q`` over simplex ``s``.

    ``q`` needs ``degree`` and a vectorized ``__call__``/``evaluate``.
    """
    V = s.vertices if isinstance(s, Simplex) else np.asarray(s, dtype=float)
    if rule.dim != V.shape[1]:
        raise DimensionError(f"rule is for dimension {rule.dim}, simplex has {V.shape[1]}")
    if q.degree > rule.degree:
        raise DegreeMismatch(f"rule exact to degree {rule.degree}, polynomial has degree {q.degree}")
    vol = _simplices_volumes(V[None])[0]
    terms = []
    for start in range(0, len(rule), batch_size):
        R = rule.points[start:start + batch_size]
        terms.append(rule.weights[start:start + batch_size] * q.evaluate(R @ V))
    return float(vol * stable_sum(np.concatenate(terms)))
