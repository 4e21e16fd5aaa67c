"""Normalized densities supported on the region of a formula.

A density is an unconstrained nonnegative polynomial (a sum of squares, or
a mixture of products of squared Hermite splines) multiplied by the
indicator of the formula and divided by its exact integral over that
region. :class:`ConstrainedDensity` exposes it with a scikit-learn style
estimator interface.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator

from .exceptions import DimensionError, NonFiniteLoss, ZeroConditionalMass, ZeroMass
from .formula import Atom, conjoin, decompose, format_file, formula_hash, holds, parse_file, substitute
from .geometry import Box
from .integrator import canonical_monomials, compile_integral, integrate_formula
from .polynomial import (
    Polynomial,
    ShiftedPolynomial,
    SosPolynomial,
    SplineDensitySpec,
    expand_square,
    hermite_basis,
    hermite_matrix,
    monomial_matrix,
    monomials_up_to,
    reparametrize_coefficients,
    reparametrize_gradient,
    sos_from_dict,
    sos_to_dict,
    squared_cubic,
    tensor_monomials,
    _bin_index,
)
from .sampling import Piece
from .validation import check_data, check_eps, check_formula, check_points, check_rng, check_satisfies

logger = logging.getLogger(__name__)

TAU_Z = 1e-300
ZERO_CONDITIONAL = 1e-12
MAX_RETRIES = 3
QUERY_OVERSHOOT = 1e-9


# ---------------------------------------------------------------- families


class _SosFamily:
    """Normalizer of ``sum_k w_k (u_k . m(y))^2`` through the Gram matrix of eta."""

    kind = "sos"

    def __init__(self, spec: SosPolynomial, f, box, decomposition=None, base=None, cache_dir=None, threads=1):
        self.f, self.box = f, box
        if base is None:
            base = canonical_monomials(np.vstack([b.exponents for _, b in spec.components]))
        self.base = base
        self.decomposition = decomposition if decomposition is not None else decompose(f, box)
        sums = (base[:, None, :] + base[None, :, :]).reshape(-1, box.dim)
        self.sum_exponents = canonical_monomials(sums)
        self.normalizer = compile_integral(self.sum_exponents, f, box, decomposition=self.decomposition,
                                           cache_dir=cache_dir, threads=threads)
        self.H = self.normalizer.gram_matrix(base)
        self._bind(spec)

    def _bind(self, spec):
        self.spec = spec
        self.U = self.coefficient_matrix(spec)
        self.w = spec.weights
        self.Z = float(np.sum(self.w * np.einsum("ki,ij,kj->k", self.U, self.H, self.U)))
        self._pieces = None

    def coefficient_matrix(self, spec):
        col = {tuple(e): i for i, e in enumerate(self.base.tolist())}
        U = np.zeros((len(spec.components), len(self.base)))
        for k, (_, b) in enumerate(spec.components):
            for e, c in zip(b.exponents.tolist(), b.coeffs):
                U[k, col[tuple(e)]] += c
        return U

    def with_spec(self, spec):
        out = object.__new__(_SosFamily)
        out.__dict__.update(self.__dict__)
        out._bind(spec)
        return out

    def unnormalized(self, Y):
        return np.asarray(self.spec.evaluate(Y), dtype=float).reshape(-1)

    def pieces(self):
        if self._pieces is None:
            self._pieces = [Piece(expand_square(self.spec), self.decomposition.regions)]
        return self._pieces

    def mass(self, g):
        ci = compile_integral(self.sum_exponents, g, self.box)
        H = ci.gram_matrix(self.base)
        return float(np.sum(self.w * np.einsum("ki,ij,kj->k", self.U, H, self.U)))

    def direct_parts(self):
        yield expand_square(self.spec), None, self.box

    def to_dict(self):
        return sos_to_dict(self.spec)


def _tensor(ci, n):
    T = np.zeros((7,) * n)
    T[tuple(ci.exponents.T)] = ci.eta
    return T


def _contract(T, S_list):
    """``sum T[a, b, ...] S_0[k, m, a] S_1[k, m, b] ...`` over bins ``m``; shape ``(K, M)``."""
    n = len(S_list)
    letters = "abcdefghij"[:n]
    sub = "m" + letters + "," + ",".join("km" + c for c in letters) + "->km"
    return np.einsum(sub, T, *S_list, optimize=True)


class _SplineFamily:
    """Per-bin compiled integrals of the tensor monomials ``{0..6}^n`` in local coordinates."""

    kind = "spline"

    def __init__(self, spec: SplineDensitySpec, f, box, cache_dir=None, threads=1):
        self.f, self.box = f, box
        n = spec.n
        self.E = tensor_monomials(n, 6)
        self.bins, self.decomps, tensors = [], [], []
        for idx in spec.bins():
            bb = spec.bin_box(idx)
            d = decompose(f, bb)
            if d.empty:
                continue
            ci = compile_integral(self.E, f, bb, decomposition=d, offset=spec.bin_offset(idx),
                                  cache_dir=cache_dir, threads=threads)
            self.bins.append(idx)
            self.decomps.append(d)
            tensors.append(_tensor(ci, n))
        self.bin_index = np.array(self.bins, dtype=np.int64).reshape(-1, n)
        self.T = np.array(tensors).reshape((len(tensors),) + (7,) * n)
        self._bind(spec)

    def _bind(self, spec):
        self.spec = spec
        self.w = spec.weights
        self.bin_masses = self.component_bin_masses(spec) .T @ self.w if len(self.bins) else np.zeros(0)
        self.Z = float(self.bin_masses.sum())
        self._pieces = None

    def squares(self, spec):
        """Per-dimension squared local cubics, each of shape ``(K, bins_j, 7)``."""
        return [squared_cubic(spec.cubic_coefficients(j)) for j in range(spec.n)]

    def component_bin_masses(self, spec, sq=None):
        sq = self.squares(spec) if sq is None else sq
        S = [sq[j][:, self.bin_index[:, j]] for j in range(spec.n)]
        return _contract(self.T, S)

    def with_spec(self, spec):
        out = object.__new__(_SplineFamily)
        out.__dict__.update(self.__dict__)
        out._bind(spec)
        return out

    def unnormalized(self, Y):
        return np.asarray(self.spec.evaluate(np.atleast_2d(Y)), dtype=float).reshape(-1)

    def pieces(self):
        if self._pieces is None:
            out = []
            last = np.array(self.spec.bin_shape) - 1
            for idx, d in zip(self.bins, self.decomps):
                off = self.spec.bin_offset(idx)
                bb = self.spec.bin_box(idx)
                p = Piece(self.spec.bin_polynomial(idx), [R.translate(off) for R in d.regions], off, bb.lo, bb.hi)
                p.closed_hi = np.array(idx) == last
                out.append(p)
            self._pieces = out
        return self._pieces

    def mass(self, g):
        total = 0.0
        for idx in self.bins:
            bb = self.spec.bin_box(idx)
            ci = compile_integral(self.E, g, bb, offset=self.spec.bin_offset(idx))
            total += ci.integrate(self.spec.bin_polynomial(idx))
        return float(total)

    def direct_parts(self):
        for idx in self.bins:
            yield self.spec.bin_polynomial(idx), self.spec.bin_offset(idx), self.spec.bin_box(idx)

    def to_dict(self):
        return self.spec.to_dict()


def _family(spec, f, box, cache_dir=None, threads=1):
    if isinstance(spec, SosPolynomial):
        fam = _SosFamily(spec, f, box, cache_dir=cache_dir, threads=threads)
    elif isinstance(spec, SplineDensitySpec):
        if spec.n != box.dim:
            raise DimensionError(f"spline has {spec.n} variables, box has {box.dim}")
        fam = _SplineFamily(spec, f, box, cache_dir=cache_dir, threads=threads)
    else:
        raise TypeError(f"unsupported density spec {type(spec).__name__}")
    if spec.n != box.dim:
        raise DimensionError(f"spec has {spec.n} variables, box has {box.dim}")
    return fam


def spec_from_dict(data):
    if data.get("family") == "sos":
        return sos_from_dict(data)
    if data.get("family") == "spline":
        return SplineDensitySpec.from_dict(data)
    raise ValueError(f"unknown density family {data.get('family')!r}")


# ---------------------------------------------------------------- fitting


@dataclass
class FitConfig:
    max_iter: int = 5000
    tol: float = 1e-8
    patience: int = 20
    armijo: float = 1e-4
    step: float = 1.0
    penalty_threshold: float = 10.0
    penalty_weight: float = 1.0
    reparametrize: bool = False
    damping: float = 0.1
    prefit_scale: bool = False


@dataclass
class FitReport:
    """Outcome of :func:`fit`. ``loss_history`` holds the per-datum loss of accepted steps."""

    iterations: int
    final_loss: float
    final_avg_loglik: float
    penalty_activations: int
    converged: bool
    message: str = ""
    loss_history: list = field(default_factory=list, repr=False)


def _penalty(logZ, cfg):
    excess = max(logZ - cfg.penalty_threshold, 0.0)
    return cfg.penalty_weight * excess**2, 2 * cfg.penalty_weight * excess


class _SosObjective:
    """Per-datum loss of an SOS density over ``(u or z, log w)``."""

    def __init__(self, fam: _SosFamily, X, cfg: FitConfig):
        self.fam, self.cfg = fam, cfg
        self.M = monomial_matrix(X, fam.base)
        self.K, self.m = fam.U.shape
        self.eta_diag = np.clip(np.diag(fam.H), 1e-300, None)

    def pack(self, U, w):
        if self.cfg.reparametrize:
            d = self.cfg.damping
            s = np.abs(U) * np.sqrt(self.eta_diag) + math.sqrt(d)
            U = np.sign(U) * (s**2 - d)
        return np.concatenate([U.ravel(), np.log(w)])

    def coefficients(self, theta):
        Z = theta[:self.K * self.m].reshape(self.K, self.m)
        if self.cfg.reparametrize:
            return reparametrize_coefficients(Z, self.eta_diag, self.cfg.damping), Z
        return Z, Z

    def unpack(self, theta):
        U, _ = self.coefficients(theta)
        w = np.exp(theta[self.K * self.m:])
        return SosPolynomial.from_matrix(self.fam.base, U, w)

    def __call__(self, theta, grad=True):
        U, Zraw = self.coefficients(theta)
        w = np.exp(theta[self.K * self.m:])
        R = self.M @ U.T
        q = (R * R) @ w
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        HU = U @ self.fam.H
        zk = np.einsum("ki,ki->k", HU, U)
        Z = float(w @ zk)
        if not (Z > 0 and np.all(np.isfinite(logq))):
            return math.inf, None, {}
        logZ = math.log(Z)
        pen, dpen = _penalty(logZ, self.cfg)
        avg = float(np.mean(logq)) - logZ
        loss = -avg + pen
        info = {"logZ": logZ, "avg_loglik": avg, "penalty": pen > 0}
        if not grad:
            return loss, None, info
        N = q.size
        cz = (1.0 + dpen) / Z
        A = (R / q[:, None]) * w
        gU = -2.0 * (A.T @ self.M) / N + cz * 2.0 * w[:, None] * HU
        gw = -w * np.mean((R * R) / q[:, None], axis=0) + cz * w * zk
        if self.cfg.reparametrize:
            gU = gU * reparametrize_gradient(Zraw, self.eta_diag, self.cfg.damping)
        return loss, np.concatenate([gU.ravel(), gw]), info


class _SplineObjective:
    """Per-datum loss of a spline mixture over ``(values, derivs, log w)``."""

    def __init__(self, fam: _SplineFamily, X, cfg: FitConfig):
        self.fam, self.cfg = fam, cfg
        spec = fam.spec
        self.template = spec
        self.n, self.K = spec.n, spec.n_components
        self.sizes = [k.size for k in spec.knots]
        self.idx, self.B = [], []
        for j, k in enumerate(spec.knots):
            i = _bin_index(k, X[:, j])
            self.idx.append(i)
            self.B.append(hermite_basis(X[:, j] - k[i], (k[i + 1] - k[i])))
        self.Ms = [np.array([hermite_matrix(h) for h in np.diff(k)]) for k in spec.knots]

    def pack(self, spec):
        parts = []
        for j in range(self.n):
            parts += [spec.values[j].ravel(), spec.derivs[j].ravel()]
        return np.concatenate(parts + [np.log(spec.weights)])

    def split(self, theta):
        vals, ders, pos = [], [], 0
        for m in self.sizes:
            vals.append(theta[pos:pos + self.K * m].reshape(self.K, m))
            pos += self.K * m
            ders.append(theta[pos:pos + self.K * m].reshape(self.K, m))
            pos += self.K * m
        return vals, ders, theta[pos:]

    def unpack(self, theta):
        vals, ders, logw = self.split(theta)
        t = self.template
        return SplineDensitySpec(t.knots, [v.copy() for v in vals], [d.copy() for d in ders], np.exp(logw), seed=t.seed)

    def __call__(self, theta, grad=True):
        vals, ders, logw = self.split(theta)
        w = np.exp(logw)
        N = self.B[0].shape[0]
        F = np.empty((N, self.K, self.n))
        for j in range(self.n):
            i = self.idx[j]
            P4 = np.stack([vals[j][:, i], ders[j][:, i], vals[j][:, i + 1], ders[j][:, i + 1]], axis=-1)
            F[:, :, j] = np.einsum("kpc,pc->pk", P4, self.B[j])
        F2 = F * F
        P = np.prod(F2, axis=2)
        q = P @ w
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        C = [np.einsum("bcd,kbd->kbc", self.Ms[j], np.stack(
            [vals[j][:, :-1], ders[j][:, :-1], vals[j][:, 1:], ders[j][:, 1:]], axis=-1)) for j in range(self.n)]
        sq = [squared_cubic(c) for c in C]
        fam = self.fam
        S = [sq[j][:, fam.bin_index[:, j]] for j in range(self.n)]
        zkb = _contract(fam.T, S)
        zk = zkb.sum(axis=1)
        Z = float(w @ zk)
        if not (Z > 0 and np.all(np.isfinite(logq))):
            return math.inf, None, {}
        logZ = math.log(Z)
        pen, dpen = _penalty(logZ, self.cfg)
        avg = float(np.mean(logq)) - logZ
        loss = -avg + pen
        info = {"logZ": logZ, "avg_loglik": avg, "penalty": pen > 0}
        if not grad:
            return loss, None, info
        cz = (1.0 + dpen) / Z
        g_parts = []
        letters = "abcdefghij"[:self.n]
        for j in range(self.n):
            m = self.sizes[j]
            others = np.prod(np.delete(F2, j, axis=2), axis=2) if self.n > 1 else np.ones_like(P)
            # d(-mean log q)/d s_kj at every datum
            ds = -2.0 * w * F[:, :, j] * others / q[:, None] / N
            gv, gd = np.zeros((self.K, m)), np.zeros((self.K, m))
            i = self.idx[j]
            for k in range(self.K):
                coef = ds[:, k, None] * self.B[j]
                gv[k] += np.bincount(i, coef[:, 0], m) + np.bincount(i + 1, coef[:, 2], m)
                gd[k] += np.bincount(i, coef[:, 1], m) + np.bincount(i + 1, coef[:, 3], m)
            # d Z / d S_j through the tensor contraction, then through the square and the Hermite map
            sub = "m" + letters + "," + ",".join("km" + c for c in letters if c != letters[j]) + "->km" + letters[j]
            gS_bins = np.einsum(sub, fam.T, *[S[l] for l in range(self.n) if l != j], optimize=True)
            gS = np.zeros_like(sq[j])
            for kk in range(self.K):
                np.add.at(gS[kk], fam.bin_index[:, j], gS_bins[kk])
            gS *= (cz * w)[:, None, None]
            gC = np.zeros_like(C[j])
            for a in range(4):
                for b in range(4):
                    gC[..., a] += 2.0 * gS[..., a + b] * C[j][..., b]
            gP4 = np.einsum("bcd,kbc->kbd", self.Ms[j], gC)
            gv[:, :-1] += gP4[..., 0]
            gd[:, :-1] += gP4[..., 1]
            gv[:, 1:] += gP4[..., 2]
            gd[:, 1:] += gP4[..., 3]
            g_parts += [gv.ravel(), gd.ravel()]
        gw = -w * np.mean(P / q[:, None], axis=0) + cz * w * zk
        return loss, np.concatenate(g_parts + [gw]), info


def _objective(fam, X, cfg):
    return (_SosObjective if fam.kind == "sos" else _SplineObjective)(fam, X, cfg)


def _initial_theta(obj, fam):
    if fam.kind == "sos":
        return obj.pack(fam.U, fam.w)
    return obj.pack(fam.spec)


def _prefit_scale(obj, fam, theta):
    """Coordinate-wise scalar per dimension applied to the SOS coefficients.

    ``u_alpha`` is multiplied by ``s_j ** alpha_j``; ``log s_j`` is picked by
    a coarse grid followed by a golden-section refinement.
    """
    U, w = obj.coefficients(theta)[0].copy(), np.exp(theta[obj.K * obj.m:])
    powers = fam.base.astype(float)

    def loss_for(j, logs):
        U2 = U * np.exp(logs * powers[:, j])[None, :]
        return obj(obj.pack(U2, w), grad=False)[0]

    for j in range(fam.box.dim):
        grid = np.linspace(-3.0, 3.0, 13)
        vals = [loss_for(j, g) for g in grid]
        best = int(np.argmin(vals))
        lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]
        if lo < hi:
            res = minimize_scalar(lambda s: loss_for(j, s), bracket=(lo, grid[best], hi) if 0 < best < len(grid) - 1
                                  else None, bounds=None, method="golden")
            logs = res.x if np.isfinite(res.fun) and res.fun <= vals[best] else grid[best]
        else:
            logs = grid[best]
        U = U * np.exp(logs * powers[:, j])[None, :]
    return obj.pack(U, w)


def _descend(obj, theta, cfg: FitConfig):
    loss, g, info = obj(theta)
    if not math.isfinite(loss):
        raise NonFiniteLoss("the initial loss is not finite (a datum has zero density or Z vanished)")
    history = [loss]
    step, stall, activations = cfg.step, 0, int(bool(info.get("penalty")))
    converged, message = False, "iteration limit reached"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gg = float(g @ g)
        if not gg > 0:
            converged, message = True, "zero gradient"
            break
        t = step
        while t > 1e-30:
            trial = theta - t * g
            new_loss, _, _ = obj(trial, grad=False)
            if math.isfinite(new_loss) and new_loss <= loss - cfg.armijo * t * gg:
                break
            t *= 0.5
        else:
            converged, message = True, "line search found no descent step"
            break
        new_loss, new_g, new_info = obj(trial)
        rel = abs(loss - new_loss) / max(abs(loss), 1e-12)
        theta, loss, g, info = trial, new_loss, new_g, new_info
        history.append(loss)
        activations += int(bool(info.get("penalty")))
        step = min(2.0 * t, 1e6)
        stall = stall + 1 if rel < cfg.tol else 0
        if stall >= cfg.patience:
            converged, message = True, "relative loss change below tolerance"
            break
    report = FitReport(
        iterations=it,
        final_loss=loss,
        final_avg_loglik=info.get("avg_loglik", math.nan),
        penalty_activations=activations,
        converged=converged,
        message=message,
        loss_history=history,
    )
    return theta, report


def fit(template, data, formula, box: Box, config: FitConfig | None = None, cache_dir=None, threads: int = 1):
    """Maximum-likelihood fit of ``template`` to ``data`` on the region of ``formula``.

    Minimizes ``-mean log p(y) + w * max(0, log Z - threshold)^2`` by full-batch
    gradient descent with Armijo backtracking. Returns ``(density, report)``.
    """
    cfg = config or FitConfig()
    check_formula(formula, box)
    X = check_data(data, box.dim)
    if X.shape[0] == 0:
        raise ValueError("no data to fit")
    check_satisfies(X, formula, box)
    fam = _family(template, formula, box, cache_dir=cache_dir, threads=threads)
    obj = _objective(fam, X, cfg)
    theta = _initial_theta(obj, fam)
    if cfg.prefit_scale and fam.kind == "sos":
        theta = _prefit_scale(obj, fam, theta)
    theta, report = _descend(obj, theta, cfg)
    density = ConstrainedDensity._from_family(fam.with_spec(obj.unpack(theta)))
    density.report_ = report
    return density, report


def normalize(spec, formula, box: Box, cache_dir=None, threads: int = 1):
    """Density proportional to ``spec`` on the region of ``formula`` within ``box``."""
    check_formula(formula, box)
    return ConstrainedDensity._from_family(_family(spec, formula, box, cache_dir=cache_dir, threads=threads))


# ---------------------------------------------------------------- estimator


class ConstrainedDensity(BaseEstimator):
    """Density estimator whose support is the region of a linear-arithmetic formula.

    ``family="sos"`` uses ``n_components`` squared polynomials of total degree
    ``degree``; ``family="spline"`` uses products of squared cubic Hermite
    splines on ``n_bins`` equal bins per dimension.
    """

    def __init__(self, formula=None, box=None, family="spline", degree=2, n_components=1, n_bins=4,
                 init_jitter=0.0, max_iter=5000, tol=1e-8, patience=20, penalty_threshold=10.0,
                 penalty_weight=1.0, reparametrize=False, prefit_scale=False, eps=None, order=None,
                 random_state=None, cache_dir=None, threads=1):
        self.formula = formula
        self.box = box
        self.family = family
        self.degree = degree
        self.n_components = n_components
        self.n_bins = n_bins
        self.init_jitter = init_jitter
        self.max_iter = max_iter
        self.tol = tol
        self.patience = patience
        self.penalty_threshold = penalty_threshold
        self.penalty_weight = penalty_weight
        self.reparametrize = reparametrize
        self.prefit_scale = prefit_scale
        self.eps = eps
        self.order = order
        self.random_state = random_state
        self.cache_dir = cache_dir
        self.threads = threads

    # construction

    @classmethod
    def _from_family(cls, fam):
        if not fam.Z > TAU_Z:
            raise ZeroMass(f"normalizing constant {fam.Z!r} is not positive")
        d = cls(formula=fam.f, box=fam.box, family=fam.kind)
        d._set_family(fam)
        return d

    @classmethod
    def from_spec(cls, spec, formula, box, **kwargs):
        return normalize(spec, formula, box, **kwargs)

    def _set_family(self, fam):
        self._fam = fam
        self.spec_ = fam.spec
        self.Z_ = fam.Z
        self.log_Z_ = math.log(fam.Z)
        self.normalizer_ = fam.normalizer if fam.kind == "sos" else dict(zip(fam.bins, fam.T))
        self.n_features_in_ = fam.box.dim
        self._permuted = {}

    def _check_fitted(self):
        if not hasattr(self, "_fam"):
            raise AttributeError("density is not fitted; call fit() or normalize() first")

    def _template(self, rng):
        f, box = check_formula(self.formula, self.box)
        seed = int(rng.integers(2**31 - 1))
        if self.family == "spline":
            return SplineDensitySpec.constant(box, self.n_bins, self.n_components, seed=seed, jitter=self.init_jitter)
        if self.family == "sos":
            E = monomials_up_to(box.dim, self.degree)
            U = np.zeros((self.n_components, len(E)))
            U[:, 0] = 1.0
            U += self.init_jitter * rng.standard_normal(U.shape)
            return SosPolynomial.from_matrix(E, U, np.full(self.n_components, 1.0 / self.n_components))
        raise ValueError(f"unknown family {self.family!r}")

    def fit(self, X, y=None):
        rng = check_rng(self.random_state)
        cfg = FitConfig(max_iter=self.max_iter, tol=self.tol, patience=self.patience,
                        penalty_threshold=self.penalty_threshold, penalty_weight=self.penalty_weight,
                        reparametrize=self.reparametrize, prefit_scale=self.prefit_scale)
        fitted, report = fit(self._template(rng), X, self.formula, self.box, cfg,
                             cache_dir=self.cache_dir, threads=self.threads)
        self._set_family(fitted._fam)
        self.report_ = report
        return self

    # evaluation

    def score_samples(self, X):
        """Log-density; ``-inf`` outside the formula, the box or the spline support."""
        self._check_fitted()
        Y, single = check_points(X, self.n_features_in_)
        out = np.full(Y.shape[0], -np.inf)
        inside = holds(self._fam.f, Y) & self._fam.box.contains(Y)
        if np.any(inside):
            q = self._fam.unnormalized(Y[inside])
            with np.errstate(divide="ignore"):
                out[inside] = np.log(q) - self.log_Z_
        return float(out[0]) if single else out

    logpdf = score_samples

    def pdf(self, X):
        return np.exp(self.score_samples(X))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(check_data(X, self.n_features_in_))))

    def query_probability(self, gamma):
        """``Pr(gamma | formula)`` from the compiled integral over the conjunction."""
        self._check_fitted()
        p = self._fam.mass(conjoin(self._fam.f, gamma)) / self.Z_
        if p < -QUERY_OVERSHOOT or p > 1 + QUERY_OVERSHOOT:
            logger.warning("query probability %r outside [0, 1] beyond tolerance", p)
        return float(min(max(p, 0.0), 1.0))

    def conditional_cdf(self, prefix, z, method="table"):
        """``Pr(y_i <= z | y_1..y_{i-1} = prefix)`` with ``i = len(prefix) + 1``.

        ``method="table"`` integrates the exact piecewise marginal;
        ``method="direct"`` integrates the substituted formula conjoined with
        ``y_i <= z`` region by region.
        """
        self._check_fitted()
        prefix = np.asarray(prefix, dtype=float).reshape(-1)
        n = self.n_features_in_
        if prefix.size >= n:
            raise DimensionError(f"prefix of length {prefix.size} leaves no free coordinate in {n} dimensions")
        if method == "direct":
            num, den = self._direct_masses(prefix, z)
        elif method == "table":
            num = den = 0.0
            i = prefix.size
            for piece in self._fam.pieces():
                if not piece.owns(prefix):
                    continue
                t = piece.table(prefix - piece.offset[:i])
                num += t.mass_below(z - piece.offset[i])
                den += t.total
        else:
            raise ValueError(f"unknown method {method!r}")
        if not den > ZERO_CONDITIONAL * self.Z_:
            raise ZeroConditionalMass(f"no conditional mass at prefix {prefix.tolist()}")
        return float(min(max(num / den, 0.0), 1.0))

    def _direct_masses(self, prefix, z):
        i, n = prefix.size, self.n_features_in_
        fixed = {j: float(v) for j, v in enumerate(prefix)}
        free = n - i
        below = Atom(tuple([1.0] + [0.0] * (free - 1)), "<=", float(z))
        num = den = 0.0
        for poly, offset, bb in self._fam.direct_parts():
            if not (np.all(prefix >= bb.lo[:i]) and np.all(prefix <= bb.hi[:i])):
                continue
            if offset is not None and not self._owner(prefix, bb):
                continue
            local = fixed if offset is None else {j: v - offset[j] for j, v in fixed.items()}
            q = poly.substitute(local) if i else poly
            if offset is not None:
                q = ShiftedPolynomial(q, offset[i:])
            g = substitute(self._fam.f, fixed, n) if i else self._fam.f
            sub_box = bb.drop(list(range(i))) if i else bb
            den += integrate_formula(q, g, sub_box)
            num += integrate_formula(q, conjoin(g, below), sub_box)
        return num, den

    def _owner(self, prefix, bb):
        for piece in self._fam.pieces():
            if np.allclose(piece.lo, bb.lo) and np.allclose(piece.hi, bb.hi):
                return piece.owns(prefix)
        return False

    # sampling

    def _pieces_in_order(self, order):
        if order is None:
            return self._fam.pieces()
        key = tuple(order)
        if key not in self._permuted:
            self._permuted[key] = [p.permuted(key) for p in self._fam.pieces()]
        return self._permuted[key]

    def _check_order(self, order):
        order = self.order if order is None else order
        if order is None:
            return None
        order = [int(o) for o in order]
        if sorted(order) != list(range(self.n_features_in_)):
            raise ValueError(f"order must be a permutation of 0..{self.n_features_in_ - 1}")
        return None if order == list(range(self.n_features_in_)) else order

    def _sample_piece(self, piece, u, eps):
        prefix = []
        for i in range(piece.n):
            table = piece.table(np.array(prefix))
            if not table.total > ZERO_CONDITIONAL * self.Z_:
                raise ZeroConditionalMass(f"empty conditional slice for coordinate {i}")
            t, (a, b) = table.inverse(u[i], eps[i])
            margin = min(0.5 * eps[i], 0.25 * (b - a))
            prefix.append(min(max(t, a + margin), b - margin))
        return np.array(prefix) + piece.offset

    def _sample_one(self, u, eps, order, rng):
        pieces = self._pieces_in_order(order)
        n = self.n_features_in_
        eps_o = eps if order is None else eps[order]
        for attempt in range(MAX_RETRIES + 1):
            uu = u if attempt == 0 else np.clip(u + 1e-9 * 10**attempt * rng.standard_normal(u.shape), 0.0, 1.0)
            try:
                if self._fam.kind == "spline":
                    masses = self._fam.bin_masses
                    cum = np.cumsum(masses)
                    k = int(np.searchsorted(cum, uu[0] * cum[-1], side="right").clip(0, len(masses) - 1))
                    while masses[k] <= 0:
                        k -= 1
                    z = self._sample_piece(pieces[k], uu[1:], eps_o)
                else:
                    z = self._sample_piece(pieces[0], uu, eps_o)
            except ZeroConditionalMass:
                if attempt == MAX_RETRIES:
                    raise
                continue
            y = np.empty(n)
            if order is None:
                y = z
            else:
                y[order] = z
            if holds(self._fam.f, y[None])[0] and self._fam.box.contains(y)[0]:
                return y
        raise ZeroConditionalMass(f"could not place a sample inside the region after {MAX_RETRIES} retries")

    def n_uniforms(self):
        self._check_fitted()
        return self.n_features_in_ + (1 if self._fam.kind == "spline" else 0)

    def sample_from_uniforms(self, U, eps=None, order=None, random_state=None):
        """Inverse transform of explicit uniforms, one row of :meth:`n_uniforms` per sample.

        Splines spend the first uniform on the bin choice.
        """
        self._check_fitted()
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[1] != self.n_uniforms():
            raise DimensionError(f"need {self.n_uniforms()} uniforms per sample, got {U.shape[1]}")
        eps = check_eps(self.eps if eps is None else eps, self._fam.box)
        order = self._check_order(order)
        rng = check_rng(random_state)
        return np.array([self._sample_one(u, eps, order, rng) for u in U])

    def sample(self, n_samples=1, random_state=None, eps=None, order=None):
        """Exact-support samples by autoregressive inverse transform; shape ``(n_samples, n)``."""
        self._check_fitted()
        rng = check_rng(self.random_state if random_state is None else random_state)
        U = rng.random((int(n_samples), self.n_uniforms()))
        return self.sample_from_uniforms(U, eps=eps, order=order, random_state=rng)

    def bin_probabilities(self):
        """Spline only: probability of each nonempty bin, keyed by bin index."""
        self._check_fitted()
        if self._fam.kind != "spline":
            raise TypeError("bin probabilities exist only for spline densities")
        return {idx: float(m / self.Z_) for idx, m in zip(self._fam.bins, self._fam.bin_masses)}

    # persistence

    def to_dict(self, eta_cache=None):
        self._check_fitted()
        return {
            "format": "wmipoly-density",
            "version": 1,
            "spec": self._fam.to_dict(),
            "formula": format_file(self._fam.f, self._fam.box),
            "formula_hash": formula_hash(self._fam.f, self._fam.box),
            "Z": self.Z_,
            "eta_cache": eta_cache,
            "report": None if getattr(self, "report_", None) is None else
            {k: v for k, v in asdict(self.report_).items() if k != "loss_history"},
        }

    def save(self, path, eta_cache=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(eta_cache), fh, indent=1)

    @classmethod
    def from_dict(cls, data, cache_dir=None, threads=1):
        f, box = parse_file(data["formula"])
        cache_dir = cache_dir if cache_dir is not None else data.get("eta_cache")
        return normalize(spec_from_dict(data["spec"]), f, box, cache_dir=cache_dir, threads=threads)

    @classmethod
    def load(cls, path, cache_dir=None, threads=1):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), cache_dir=cache_dir, threads=threads)
