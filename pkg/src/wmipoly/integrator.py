"""Exact polynomial integration over polytopes and formulas.

:func:`gasp_integrate` integrates one polynomial over one convex polytope.
:func:`compile_integral` integrates every monomial of a fixed list over the
region of a formula once; the resulting :class:`CompiledIntegral` turns the
integral of any polynomial over those monomials into a dot product.
"""
from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cubature import DEFAULT_BATCH, prepare_grundmann_moller, stable_sum
from .exceptions import DegreeCap, DimensionError, EmptyConditional, LengthMismatch, ParseError
from .formula import ConvexDecomposition, decompose, format_file, substitute
from .geometry import Box, Polytope, Simplex, VertexSet, _simplices_volumes, h_to_v, triangulate
from .polynomial import Polynomial, grlex_order, monomial_matrix

logger = logging.getLogger(__name__)

MAX_DEGREE = 64


def _as_simplices(H):
    if isinstance(H, Polytope):
        return triangulate(h_to_v(H), return_array=True)
    if isinstance(H, VertexSet):
        return triangulate(H, return_array=True)
    if isinstance(H, Simplex):
        return H.vertices[None]
    if isinstance(H, (list, tuple)) and H and isinstance(H[0], Simplex):
        return np.array([s.vertices for s in H])
    S = np.asarray(H, dtype=float)
    return S[None] if S.ndim == 2 else S


def gasp_integrate(q, H, batch_size: int = DEFAULT_BATCH) -> float:
    """Integral of polynomial ``q`` over a convex polytope.

    ``H`` may be a :class:`Polytope` (H-description), a :class:`VertexSet`,
    a :class:`Simplex`, a list of simplices or a ``(k, n+1, n)`` array.
    The polytope is triangulated and each simplex is integrated with a
    Grundmann-Moeller rule matching the degree of ``q``.
    """
    S = _as_simplices(H)
    n = S.shape[2]
    if q.n != n:
        raise DimensionError(f"polynomial in {q.n} variables, region in {n}")
    rule = prepare_grundmann_moller(q.degree, n)
    vols = _simplices_volumes(S)
    per_simplex = np.empty(len(S))
    for i, s in enumerate(S):
        parts = []
        for start in range(0, len(rule), batch_size):
            R = rule.points[start:start + batch_size]
            parts.append(rule.weights[start:start + batch_size] * q.evaluate(R @ s))
        per_simplex[i] = vols[i] * stable_sum(np.concatenate(parts))
    return stable_sum(per_simplex)


def monomial_integrals(exponents, simplices, offset=None, stable: bool = True, batch_size: int = DEFAULT_BATCH):
    """``eta[i] = sum over simplices of the integral of y**exponents[i]``.

    With ``offset`` the monomials are taken in shifted coordinates
    ``y - offset``. ``stable=False`` swaps the compensated reduction for a
    plain sum (used on hot paths where the few extra ulps do not matter).
    """
    E = np.asarray(exponents, dtype=np.int64)
    S = np.asarray(simplices, dtype=float)
    if S.size == 0:
        return np.zeros(len(E))
    n = S.shape[2]
    if offset is not None:
        S = S - np.asarray(offset, dtype=float)
    degree = int(E.sum(axis=1).max()) if len(E) else 0
    rule = prepare_grundmann_moller(degree, n)
    vols = _simplices_volumes(S)
    # (k, P, n): every cubature point mapped into every simplex
    X = np.einsum("pv,kvn->kpn", rule.points, S)
    W = vols[:, None] * rule.weights[None, :]
    contributions = []
    per_batch = max(1, batch_size // max(len(rule), 1))
    for start in range(0, len(S), per_batch):
        Xb = X[start:start + per_batch].reshape(-1, n)
        Wb = W[start:start + per_batch].reshape(-1)
        vals = monomial_matrix(Xb, E) * Wb[:, None]
        contributions.append(vals)
    allvals = np.vstack(contributions)
    if stable:
        return np.asarray(stable_sum(allvals, axis=0), dtype=float).reshape(-1)
    return allvals.sum(axis=0)


@dataclass(frozen=True)
class CompiledIntegral:
    """Per-monomial integrals ``eta`` over a fixed region.

    ``evaluate(lam)`` is the integral of ``sum_i lam[i] * y**exponents[i]``.
    """

    exponents: np.ndarray
    eta: np.ndarray
    n: int
    degree: int
    formula_hash: str = ""
    n_regions: int = 0
    n_simplices: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        E = np.asarray(self.exponents, dtype=np.int64).reshape(-1, self.n)
        eta = np.asarray(self.eta, dtype=float).reshape(-1)
        if len(E) != eta.size:
            raise LengthMismatch(f"{len(E)} monomials but {eta.size} integrals")
        E.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "exponents", E)
        object.__setattr__(self, "eta", eta)

    def __len__(self):
        return self.eta.size

    def evaluate(self, lam):
        """Integral for coefficients ``lam``; a ``(K, M)`` array gives ``K`` integrals."""
        lam = np.asarray(lam, dtype=float)
        if lam.shape[-1] != self.eta.size:
            raise LengthMismatch(f"expected {self.eta.size} coefficients, got {lam.shape[-1]}")
        out = lam @ self.eta
        return float(out) if np.ndim(out) == 0 else out

    __call__ = evaluate

    def integrate(self, p: Polynomial) -> float:
        """Integral of ``p`` whose monomials must be a subset of ``exponents``."""
        return self.evaluate(self.coefficients_for(p))

    def coefficients_for(self, p: Polynomial):
        index = {tuple(e): i for i, e in enumerate(self.exponents.tolist())}
        lam = np.zeros(self.eta.size)
        for e, c in zip(p.exponents.tolist(), p.coeffs):
            try:
                lam[index[tuple(e)]] += c
            except KeyError:
                raise LengthMismatch(f"monomial {tuple(e)} was not compiled") from None
        return lam

    def gram_matrix(self, base_exponents):
        """``H[i, j] = eta[alpha_i + alpha_j]``, so ``u^T H u`` integrates ``(u . m)^2``."""
        B = np.asarray(base_exponents, dtype=np.int64)
        index = {tuple(e): i for i, e in enumerate(self.exponents.tolist())}
        sums = (B[:, None, :] + B[None, :, :]).reshape(-1, self.n)
        try:
            idx = np.array([index[tuple(e)] for e in sums.tolist()])
        except KeyError as exc:
            raise LengthMismatch(f"monomial {exc.args[0]} was not compiled") from None
        H = self.eta[idx].reshape(len(B), len(B))
        return 0.5 * (H + H.T)

    def evaluate_sos(self, U, weights, base_exponents):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        H = self.gram_matrix(base_exponents)
        return float(np.sum(np.asarray(weights) * np.einsum("ki,ij,kj->k", U, H, U)))

    def to_text(self):
        lines = [
            "# compiled-integral v1",
            f"hash {self.formula_hash or '-'}",
            f"n {self.n}",
            f"degree {self.degree}",
            f"monomials {len(self)}",
            f"regions {self.n_regions}",
            f"simplices {self.n_simplices}",
        ]
        for e, v in zip(self.exponents.tolist(), self.eta):
            lines.append(" ".join(str(x) for x in e) + " " + repr(float(v)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        header = {}
        rows = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if toks[0] in ("hash", "n", "degree", "monomials", "regions", "simplices"):
                header[toks[0]] = toks[1]
                continue
            rows.append((lineno, toks))
        try:
            n = int(header["n"])
            E = np.array([[int(t) for t in toks[:n]] for _, toks in rows], dtype=np.int64).reshape(-1, n)
            eta = np.array([float(toks[n]) for _, toks in rows])
        except (KeyError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed compiled-integral file: {exc}", rows[0][0] if rows else 1, 1) from None
        if "monomials" in header and int(header["monomials"]) != len(eta):
            raise ParseError("monomial count does not match header", 1, 1)
        return cls(
            exponents=E,
            eta=eta,
            n=n,
            degree=int(header.get("degree", 0)),
            formula_hash="" if header.get("hash", "-") == "-" else header["hash"],
            n_regions=int(header.get("regions", 0)),
            n_simplices=int(header.get("simplices", 0)),
        )


def canonical_monomials(monomials):
    E = np.asarray(monomials, dtype=np.int64)
    E = np.unique(E, axis=0)
    return E[grlex_order(E)]


def content_hash(f, box: Box, exponents, offset=None) -> str:
    h = hashlib.sha256()
    h.update(format_file(f, box).encode())
    h.update(np.ascontiguousarray(np.asarray(exponents, dtype=np.int64)).tobytes())
    if offset is not None:
        h.update(np.asarray(offset, dtype=float).tobytes())
    return h.hexdigest()


def compile_decomposition(exponents, decomposition: ConvexDecomposition, offset=None, threads: int = 1):
    """``eta`` summed region by region in deterministic region order."""
    E = np.asarray(exponents, dtype=np.int64)
    simplices = decomposition.simplices()
    if not simplices:
        return np.zeros(len(E))
    work = lambda S: monomial_integrals(E, S, offset=offset)  # noqa: E731
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads > 1 and len(simplices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_region = list(pool.map(work, simplices))
    else:
        per_region = [work(S) for S in simplices]
    return np.asarray(stable_sum(np.vstack(per_region), axis=0)).reshape(-1)


def compile_integral(monomials, f, box: Box, decomposition: ConvexDecomposition | None = None,
                     offset=None, cache_dir=None, threads: int = 1, max_degree: int = MAX_DEGREE):
    """Compile the integrals of ``monomials`` over ``f`` within ``box``.

    With ``cache_dir`` the result is stored under a content hash of
    ``(formula, box, monomials, offset)`` and reused on later calls.
    """
    E = canonical_monomials(monomials)
    if E.ndim != 2 or E.shape[1] != box.dim:
        raise DimensionError(f"monomials must have {box.dim} exponents each")
    degree = int(E.sum(axis=1).max()) if len(E) else 0
    if degree > max_degree:
        raise DegreeCap(f"total degree {degree} exceeds the cap {max_degree}")
    key = content_hash(f, box, E, offset)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{key}.eta"
        if path.exists():
            logger.info("compiled-integral cache hit %s", path)
            ci = CompiledIntegral.from_text(path.read_text())
            object.__setattr__(ci, "meta", {"cache": "hit", "path": str(path)})
            return ci
    d = decomposition if decomposition is not None else decompose(f, box)
    eta = compile_decomposition(E, d, offset=offset, threads=threads)
    ci = CompiledIntegral(
        exponents=E,
        eta=eta,
        n=box.dim,
        degree=degree,
        formula_hash=key,
        n_regions=len(d.regions),
        n_simplices=int(sum(len(S) for S in d.simplices())),
        meta={"cache": "miss"},
    )
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ci.to_text())
        ci.meta["path"] = str(path)
    return ci


def integrate_formula(q: Polynomial, f, box: Box, decomposition=None) -> float:
    """Integral of ``q`` over ``f`` within ``box`` by direct per-region cubature."""
    d = decomposition if decomposition is not None else decompose(f, box)
    return stable_sum([gasp_integrate(q, S) for S in d.simplices()])


def integrate_marginal(monomials, f, box: Box, fixed, n: int | None = None):
    """Compile over the free variables after fixing ``{index: value}``.

    The returned integral is over the reduced monomials (fixed exponents
    dropped); pair it with ``Polynomial.substitute(fixed)`` coefficients.
    """
    E = np.asarray(monomials, dtype=np.int64)
    n = box.dim
    fixed = {int(k): float(v) for k, v in fixed.items()}
    for j, v in fixed.items():
        if not 0 <= j < n:
            raise DimensionError(f"no variable with index {j}")
        if not box.lo[j] <= v <= box.hi[j]:
            raise EmptyConditional(f"y{j + 1} = {v} lies outside the box")
    free = [j for j in range(n) if j not in fixed]
    if not free:
        raise DimensionError("at least one variable must stay free")
    g = substitute(f, fixed, n)
    sub_box = box.drop(list(fixed))
    d = decompose(g, sub_box)
    if d.empty:
        raise EmptyConditional("the substituted formula has no feasible region")
    return compile_integral(E[:, free], g, sub_box, decomposition=d)
