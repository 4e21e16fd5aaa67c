"""Input checks shared by the density estimator and the command line."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataViolatesConstraint, DimensionError
from .formula import dimension, holds
from .geometry import Box


def check_data(X, n: int | None = None):
    """Finite float array of shape ``(N, n)``; a 1-D input is one row."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True)
    if n is not None and X.shape[1] != n:
        raise DimensionError(f"expected {n} columns, got {X.shape[1]}")
    return X


def check_points(Y, n: int):
    """Like :func:`check_data` but allows non-finite entries and returns ``(Y, single)``."""
    Y = np.asarray(Y, dtype=float)
    single = Y.ndim == 1
    Y = np.atleast_2d(Y)
    if Y.shape[-1] != n:
        raise DimensionError(f"expected points with {n} coordinates, got {Y.shape[-1]}")
    return Y, single


def check_formula(f, box: Box):
    d = dimension(f)
    if box is None:
        raise DimensionError("a bounding box is required")
    if d is not None and d != box.dim:
        raise DimensionError(f"formula has {d} variables, box has {box.dim}")
    return f, box


def check_satisfies(X, f, box: Box):
    """Raise :class:`DataViolatesConstraint` listing rows outside ``f`` or ``box``."""
    ok = holds(f, X) & box.contains(X)
    if not np.all(ok):
        raise DataViolatesConstraint(np.flatnonzero(~ok).tolist())
    return X


def check_rng(random_state):
    """A ``numpy.random.Generator`` from ``None``, a seed or a generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, np.random.RandomState):
        return np.random.default_rng(random_state.randint(0, 2**31 - 1))
    return np.random.default_rng(random_state)


def check_eps(eps, box: Box):
    """Per-dimension bisection tolerance; ``None`` means ``1e-6`` of each box width."""
    if eps is None:
        return 1e-6 * box.widths
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (box.dim,)).copy()
    if not np.all(eps > 0):
        raise ValueError("eps must be positive")
    return eps
