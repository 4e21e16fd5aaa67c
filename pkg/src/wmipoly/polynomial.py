"""Multivariate polynomials in monomial form, sums of squares and Hermite splines."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, ParseError
from .geometry import Box

logger = logging.getLogger(__name__)


def grlex_order(exponents):
    """Indices sorting exponent rows in graded lexicographic order."""
    E = np.asarray(exponents, dtype=np.int64)
    if E.shape[0] == 0:
        return np.arange(0)
    keys = [-E[:, j] for j in range(E.shape[1] - 1, -1, -1)] + [E.sum(axis=1)]
    return np.lexsort(keys)


def monomials_up_to(n: int, d: int, subsample: int | None = None, seed: int | None = None):
    """All exponent vectors of total degree ``<= d`` in ``n`` variables.

    With ``subsample`` a seeded random subset of that size is returned
    (the constant monomial is always kept).
    """
    E = np.array([e for e in itertools.product(range(d + 1), repeat=n) if sum(e) <= d], dtype=np.int64)
    E = E[grlex_order(E)]
    if subsample is not None and subsample < len(E):
        rng = np.random.default_rng(seed)
        pick = rng.choice(np.arange(1, len(E)), size=max(subsample - 1, 0), replace=False)
        E = E[np.sort(np.concatenate([[0], pick]))]
    return E


def tensor_monomials(n: int, per_dim_degree: int):
    """Exponent grid ``{0..k}^n`` in graded lexicographic order."""
    E = np.array(list(itertools.product(range(per_dim_degree + 1), repeat=n)), dtype=np.int64)
    return E[grlex_order(E)]


def monomial_matrix(Y, exponents):
    """``out[p, i] = prod_j Y[p, j] ** exponents[i, j]`` with ``0**0 == 1``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    E = np.asarray(exponents, dtype=np.int64)
    N, n = Y.shape
    if E.shape[0] == 0:
        return np.zeros((N, 0))
    out = np.ones((N, E.shape[0]))
    for j in range(n):
        col = E[:, j]
        top = int(col.max())
        if top == 0:
            continue
        powers = np.cumprod(np.hstack([np.ones((N, 1)), np.repeat(Y[:, j:j + 1], top, axis=1)]), axis=1)
        out *= powers[:, col]
    return out


def _collect(exponents, coeffs):
    E = np.asarray(exponents, dtype=np.int64)
    c = np.asarray(coeffs, dtype=float)
    if E.shape[0] == 0:
        return E, c
    uniq, inverse = np.unique(E, axis=0, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inverse.reshape(-1), c)
    order = grlex_order(uniq)
    return uniq[order], summed[order]


class Polynomial:
    """``sum_i coeffs[i] * prod_j y_j ** exponents[i, j]``.

    The monomial list is kept duplicate-free in graded lexicographic order.
    Zero coefficients are retained so monomial lists stay stable.
    """

    __slots__ = ("exponents", "coeffs")

    def __init__(self, exponents, coeffs, n: int | None = None):
        E = np.asarray(exponents, dtype=np.int64)
        if E.ndim == 1:
            E = E.reshape(-1, n if n is not None else E.size)
        if E.size == 0:
            E = E.reshape(0, n if n is not None else E.shape[1])
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        if c.size != E.shape[0]:
            raise DimensionError(f"{E.shape[0]} monomials but {c.size} coefficients")
        if np.any(E < 0):
            raise ValueError("exponents must be nonnegative integers")
        E, c = _collect(E, c)
        E.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "exponents", E)
        object.__setattr__(self, "coeffs", c)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    @classmethod
    def constant(cls, value, n):
        return cls(np.zeros((1, n), dtype=np.int64), [value])

    @classmethod
    def from_dict(cls, terms, n):
        return cls(np.array(list(terms.keys()), dtype=np.int64).reshape(-1, n), list(terms.values()))

    @property
    def n(self):
        return self.exponents.shape[1]

    @property
    def degree(self):
        return int(self.exponents.sum(axis=1).max()) if len(self) else 0

    def __len__(self):
        return self.exponents.shape[0]

    def __repr__(self):
        return f"Polynomial(n={self.n}, terms={len(self)}, degree={self.degree})"

    def terms(self):
        return {tuple(int(x) for x in e): float(c) for e, c in zip(self.exponents, self.coeffs)}

    def evaluate(self, Y):
        Y = np.asarray(Y, dtype=float)
        single = Y.ndim == 1
        Y = np.atleast_2d(Y)
        if Y.shape[1] != self.n:
            raise DimensionError(f"polynomial in {self.n} variables evaluated at {Y.shape[1]}-vectors")
        out = monomial_matrix(Y, self.exponents) @ self.coeffs
        return float(out[0]) if single else out

    __call__ = evaluate

    def _check(self, other):
        if other.n != self.n:
            raise DimensionError(f"dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other):
        if np.isscalar(other):
            other = Polynomial.constant(other, self.n)
        self._check(other)
        return Polynomial(np.vstack([self.exponents, other.exponents]),
                          np.concatenate([self.coeffs, other.coeffs]))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.exponents, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self.exponents, self.coeffs * float(other))
        self._check(other)
        E = (self.exponents[:, None, :] + other.exponents[None, :, :]).reshape(-1, self.n)
        c = np.outer(self.coeffs, other.coeffs).reshape(-1)
        return Polynomial(E, c)

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, Polynomial) and self.exponents.shape == other.exponents.shape
                and np.array_equal(self.exponents, other.exponents) and np.array_equal(self.coeffs, other.coeffs))

    __hash__ = None

    def with_coeffs(self, coeffs):
        return Polynomial(self.exponents, coeffs)

    def substitute(self, fixed):
        """Fix variables ``{index: value}``; returns a polynomial in the rest."""
        fixed = {int(k): float(v) for k, v in fixed.items()}
        free = [j for j in range(self.n) if j not in fixed]
        factor = np.ones(len(self))
        for j, v in fixed.items():
            factor *= v ** self.exponents[:, j]
        E = self.exponents[:, free]
        return Polynomial(E, self.coeffs * factor, n=len(free))

    def to_text(self):
        return "".join(
            repr(float(c)) + " " + " ".join(str(int(x)) for x in e) + "\n"
            for e, c in zip(self.exponents, self.coeffs)
        )

    @classmethod
    def from_text(cls, text, n: int | None = None):
        exps, coeffs = [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            try:
                coeffs.append(float(toks[0]))
                exps.append([int(t) for t in toks[1:]])
            except ValueError as exc:
                raise ParseError(f"bad polynomial term: {exc}", lineno, 1) from None
            if exps[0] and len(exps[-1]) != len(exps[0]):
                raise DimensionError(f"line {lineno}: inconsistent number of exponents")
        if not exps:
            raise ParseError("empty polynomial", 1, 1)
        dim = len(exps[0]) if n is None else n
        if dim == 0:
            raise DimensionError("polynomial terms need at least one exponent")
        return cls(np.array(exps, dtype=np.int64).reshape(-1, dim), coeffs)


class ShiftedPolynomial:
    """Evaluates ``p(y - offset)`` without re-expanding coefficients."""

    def __init__(self, p: Polynomial, offset):
        offset = np.asarray(offset, dtype=float).reshape(-1)
        if offset.size != p.n:
            raise DimensionError(f"offset has {offset.size} entries, polynomial has {p.n} variables")
        self.base = p
        self.offset = offset

    @property
    def n(self):
        return self.base.n

    @property
    def degree(self):
        return self.base.degree

    def evaluate(self, Y):
        Y = np.asarray(Y, dtype=float)
        return self.base.evaluate(Y - self.offset)

    __call__ = evaluate


def shift_monomials(p: Polynomial, offset) -> ShiftedPolynomial:
    return ShiftedPolynomial(p, offset)


class SosPolynomial:
    """``sum_k weights[k] * bases[k](y) ** 2`` with every weight positive."""

    def __init__(self, components):
        components = [(float(w), base) for w, base in components]
        if not components:
            raise ValueError("a sum of squares needs at least one component")
        if any(not w > 0 for w, _ in components):
            raise ValueError("sum-of-squares weights must all be positive")
        dims = {base.n for _, base in components}
        if len(dims) != 1:
            raise DimensionError(f"components of mixed dimension {sorted(dims)}")
        self.components = components

    @classmethod
    def from_matrix(cls, exponents, U, weights):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return cls([(w, Polynomial(exponents, u)) for w, u in zip(weights, U)])

    @property
    def n(self):
        return self.components[0][1].n

    @property
    def weights(self):
        return np.array([w for w, _ in self.components])

    @property
    def degree(self):
        return 2 * max(base.degree for _, base in self.components)

    def evaluate(self, Y):
        return sum(w * base.evaluate(Y) ** 2 for w, base in self.components)

    __call__ = evaluate

    def expand(self):
        return expand_square(self)


def expand_square(s: SosPolynomial) -> Polynomial:
    total = None
    for w, base in s.components:
        sq = (base * base) * w
        total = sq if total is None else total + sq
    return total


def hermite_matrix(width: float):
    """Linear map ``(v_i, v'_i, v_{i+1}, v'_{i+1}) -> (a', b', c', d')``.

    The cubic ``a' + b' x + c' x^2 + d' x^3`` lives on ``x in [0, width]``
    and derivatives are measured in the same coordinate as ``x``.
    """
    if not width > 0:
        raise ValueError(f"bin width must be positive, got {width}")
    h = float(width)
    return np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [-3.0 / h**2, -2.0 / h, 3.0 / h**2, -1.0 / h],
        [2.0 / h**3, 1.0 / h**2, -2.0 / h**3, 1.0 / h**2],
    ])


def hermite_bin_coefficients(v0, dv0, v1, dv1, width):
    """Coefficients of the cubic on ``[0, width]`` matching values and slopes.

    The reference cubic on ``[0, 1]`` is built from the slopes scaled by
    ``width`` and then rescaled to the bin, so the returned cubic reproduces
    ``dv0``/``dv1`` as derivatives in the original coordinate.
    """
    if not width > 0:
        raise ValueError(f"bin width must be positive, got {width}")
    h = float(width)
    s0, s1 = dv0 * h, dv1 * h
    a = v0
    b = s0
    c = 3 * (v1 - v0) - 2 * s0 - s1
    d = 2 * (v0 - v1) + s0 + s1
    return a, b / h, c / h**2, d / h**3


def hermite_basis(x, width):
    """Weights of ``(v_i, v'_i, v_{i+1}, v'_{i+1})`` at local offsets ``x``."""
    u = np.asarray(x, dtype=float) / width
    u2, u3 = u * u, u * u * u
    return np.stack([
        2 * u3 - 3 * u2 + 1,
        width * (u3 - 2 * u2 + u),
        -2 * u3 + 3 * u2,
        width * (u3 - u2),
    ], axis=-1)


def _bin_index(knots, x):
    idx = np.searchsorted(knots, x, side="right") - 1
    return np.clip(idx, 0, len(knots) - 2)


class HermiteSpline1D:
    """Piecewise cubic through ``values`` with slopes ``derivs`` at ``knots``."""

    def __init__(self, knots, values, derivs):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.derivs = np.asarray(derivs, dtype=float)
        if self.knots.ndim != 1 or self.knots.size < 2:
            raise ValueError("a spline needs at least two knots")
        if not np.all(np.diff(self.knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if self.values.shape != self.knots.shape or self.derivs.shape != self.knots.shape:
            raise DimensionError("values and derivs need one entry per knot")

    @property
    def n_bins(self):
        return self.knots.size - 1

    def bin_coefficients(self, i):
        h = self.knots[i + 1] - self.knots[i]
        return np.array(hermite_bin_coefficients(
            self.values[i], self.derivs[i], self.values[i + 1], self.derivs[i + 1], h))

    def evaluate(self, x):
        """Spline value; zero outside ``[knots[0], knots[-1]]``."""
        x = np.asarray(x, dtype=float)
        i = _bin_index(self.knots, x)
        h = self.knots[i + 1] - self.knots[i]
        B = hermite_basis(x - self.knots[i], h)
        out = (B[..., 0] * self.values[i] + B[..., 1] * self.derivs[i]
               + B[..., 2] * self.values[i + 1] + B[..., 3] * self.derivs[i + 1])
        inside = (x >= self.knots[0]) & (x <= self.knots[-1])
        return np.where(inside, out, 0.0)

    __call__ = evaluate

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        i = _bin_index(self.knots, x)
        C = np.array([self.bin_coefficients(k) for k in range(self.n_bins)])[i]
        t = x - self.knots[i]
        return C[..., 1] + 2 * C[..., 2] * t + 3 * C[..., 3] * t * t


def squared_cubic(c):
    """Coefficients (ascending powers) of ``(c0 + c1 x + c2 x^2 + c3 x^3)^2``."""
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape[:-1] + (7,))
    for i in range(4):
        for j in range(4):
            out[..., i + j] += c[..., i] * c[..., j]
    return out


@dataclass
class SplineDensitySpec:
    """Mixture ``sum_k w_k prod_j s_kj(y_j)^2`` of products of squared splines.

    ``values[j]`` and ``derivs[j]`` have shape ``(K, len(knots[j]))``.
    Bins are the Cartesian product of the per-dimension knot intervals.
    """

    knots: list
    values: list
    derivs: list
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.knots = [np.asarray(k, dtype=float) for k in self.knots]
        self.values = [np.atleast_2d(np.asarray(v, dtype=float)) for v in self.values]
        self.derivs = [np.atleast_2d(np.asarray(v, dtype=float)) for v in self.derivs]
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        K = self.weights.size
        if not (len(self.knots) == len(self.values) == len(self.derivs)) or not self.knots:
            raise DimensionError("knots, values and derivs need one entry per dimension")
        for j, k in enumerate(self.knots):
            if k.ndim != 1 or k.size < 2 or not np.all(np.diff(k) > 0):
                raise ValueError(f"knots of dimension {j} must be strictly increasing, at least two")
            for arr in (self.values[j], self.derivs[j]):
                if arr.shape != (K, k.size):
                    raise DimensionError(f"dimension {j}: expected shape {(K, k.size)}, got {arr.shape}")
        if K < 1 or not np.all(self.weights > 0):
            raise ValueError("mixture weights must be positive")

    @classmethod
    def constant(cls, box: Box, n_bins, n_components=1, seed=None, jitter=0.0):
        """Template whose density is flat on ``box`` (plus optional seeded jitter)."""
        rng = np.random.default_rng(seed)
        if np.isscalar(n_bins):
            n_bins = [int(n_bins)] * box.dim
        knots = [np.linspace(lo, hi, m + 1) for lo, hi, m in zip(box.lo, box.hi, n_bins)]
        values = [1.0 + jitter * rng.standard_normal((n_components, k.size)) for k in knots]
        derivs = [jitter * rng.standard_normal((n_components, k.size)) / (k[-1] - k[0]) for k in knots]
        return cls(knots, values, derivs, np.full(n_components, 1.0 / n_components), seed=seed)

    @property
    def n(self):
        return len(self.knots)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def bin_shape(self):
        return tuple(k.size - 1 for k in self.knots)

    @property
    def degree(self):
        return 6 * self.n

    def splines(self, k, j):
        return HermiteSpline1D(self.knots[j], self.values[j][k], self.derivs[j][k])

    def bins(self):
        return list(itertools.product(*[range(m) for m in self.bin_shape]))

    def bin_box(self, idx):
        lo = [self.knots[j][i] for j, i in enumerate(idx)]
        hi = [self.knots[j][i + 1] for j, i in enumerate(idx)]
        return Box(lo, hi)

    def bin_offset(self, idx):
        return np.array([self.knots[j][i] for j, i in enumerate(idx)])

    def support_box(self):
        return Box([k[0] for k in self.knots], [k[-1] for k in self.knots])

    def cubic_coefficients(self, j):
        """Local cubic coefficients, shape ``(K, bins_j, 4)``."""
        k = self.knots[j]
        v, d = self.values[j], self.derivs[j]
        out = np.empty((self.n_components, k.size - 1, 4))
        for i in range(k.size - 1):
            M = hermite_matrix(k[i + 1] - k[i])
            params = np.stack([v[:, i], d[:, i], v[:, i + 1], d[:, i + 1]], axis=-1)
            out[:, i] = params @ M.T
        return out

    def factor_values(self, Y):
        """``s_kj(y_j)`` for every component and dimension, shape ``(N, K, n)``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = np.empty((Y.shape[0], self.n_components, self.n))
        for j in range(self.n):
            for k in range(self.n_components):
                out[:, k, j] = self.splines(k, j).evaluate(Y[:, j])
        return out

    def evaluate(self, Y):
        Y = np.asarray(Y, dtype=float)
        single = Y.ndim == 1
        Y = np.atleast_2d(Y)
        if Y.shape[1] != self.n:
            raise DimensionError(f"spline density in {self.n} variables evaluated at {Y.shape[1]}-vectors")
        S = self.factor_values(Y)
        out = np.prod(S**2, axis=2) @ self.weights
        return float(out[0]) if single else out

    __call__ = evaluate

    def bin_polynomial(self, idx):
        """The density on bin ``idx`` as a polynomial in local coordinates ``y - offset``."""
        E = tensor_monomials(self.n, 6)
        coeffs = np.zeros(len(E))
        for k in range(self.n_components):
            factors = [squared_cubic(self.cubic_coefficients(j)[k, i]) for j, i in enumerate(idx)]
            coeffs += self.weights[k] * np.prod([f[E[:, j]] for j, f in enumerate(factors)], axis=0)
        return Polynomial(E, coeffs)

    def to_dict(self):
        return {
            "family": "spline",
            "knots": [k.tolist() for k in self.knots],
            "values": [v.tolist() for v in self.values],
            "derivs": [d.tolist() for d in self.derivs],
            "weights": self.weights.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["knots"], data["values"], data["derivs"], data["weights"], seed=data.get("seed"))


def sos_to_dict(s: SosPolynomial, seed=None):
    return {
        "family": "sos",
        "weights": s.weights.tolist(),
        "components": [
            {"exponents": base.exponents.tolist(), "coeffs": base.coeffs.tolist()} for _, base in s.components
        ],
        "seed": seed,
    }


def sos_from_dict(data):
    comps = []
    n = None
    for w, comp in zip(data["weights"], data["components"]):
        E = np.asarray(comp["exponents"], dtype=np.int64)
        n = E.shape[1] if E.ndim == 2 else n
        comps.append((w, Polynomial(E, comp["coeffs"], n=n)))
    return SosPolynomial(comps)


def reparametrize_coefficients(z, eta_diag, damping=0.1):
    """Damped coefficient map ``sign(z) (sqrt(|z| + d) - sqrt(d)) / sqrt(eta_ii)``.

    Large ``eta_ii`` (usually high-degree monomials) shrink the coefficient.
    """
    if not damping > 0:
        raise ValueError("damping must be positive")
    z = np.asarray(z, dtype=float)
    eta_diag = np.asarray(eta_diag, dtype=float)
    if np.any(eta_diag <= 0):
        raise ValueError("eta_ii must be positive")
    return np.sign(z) * (np.sqrt(np.abs(z) + damping) - math.sqrt(damping)) / np.sqrt(eta_diag)


def reparametrize_gradient(z, eta_diag, damping=0.1):
    """Elementwise derivative of :func:`reparametrize_coefficients`."""
    z = np.asarray(z, dtype=float)
    return 0.5 / (np.sqrt(np.abs(z) + damping) * np.sqrt(np.asarray(eta_diag, dtype=float)))
