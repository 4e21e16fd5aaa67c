import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmipoly.cubature import gm_level, integrate_on_simplex, prepare_grundmann_moller, stable_sum
from wmipoly.exceptions import DegreeMismatch, DimensionError
from wmipoly.geometry import Simplex, simplex_volume
from wmipoly.polynomial import Polynomial


def dirichlet(alpha):
    """Exact integral of prod y_j^a_j over the unit simplex."""
    n = len(alpha)
    return Fraction(math.prod(math.factorial(a) for a in alpha), math.factorial(n + sum(alpha)))


def unit_simplex(n):
    return np.vstack([np.zeros(n), np.eye(n)])


def monomial(alpha, c=1.0):
    return Polynomial([list(alpha)], [c])


def test_midpoint_rule():
    r = prepare_grundmann_moller(1, 1)
    assert len(r) == 1
    assert np.allclose(r.points, [[0.5, 0.5]])
    assert r.weights.tolist() == [1.0]


def test_centroid_rule():
    r = prepare_grundmann_moller(0, 3)
    assert len(r) == 1
    assert np.allclose(r.points, [[0.25] * 4])
    assert r.weights[0] == pytest.approx(1.0)


def test_degree_five_triangle():
    r = prepare_grundmann_moller(5, 2)
    val = integrate_on_simplex(monomial((2, 3)), unit_simplex(2), r)
    assert val == pytest.approx(12 / 5040, rel=1e-12)


def test_examples():
    r = prepare_grundmann_moller(4, 2)
    T = Simplex([[0, 0], [2, 0], [0, 2]])
    assert integrate_on_simplex(Polynomial.constant(1.0, 2), T, r) == pytest.approx(2.0)
    assert integrate_on_simplex(monomial((1, 0)), unit_simplex(2), r) == pytest.approx(1 / 6)
    p = Polynomial([[1, 0], [0, 1]], [1, 1])
    # termwise Dirichlet: sum_k C(4,k) k!(4-k)!/6! = 1/6
    want = float(sum(math.comb(4, k) * dirichlet((k, 4 - k)) for k in range(5)))
    assert want == pytest.approx(1 / 6)
    assert integrate_on_simplex(p * p * p * p, unit_simplex(2), r) == pytest.approx(want, rel=1e-12)


def test_degree_and_dimension_checks():
    r = prepare_grundmann_moller(3, 2)
    with pytest.raises(DegreeMismatch):
        integrate_on_simplex(monomial((2, 2)), unit_simplex(2), r)
    with pytest.raises(DimensionError):
        integrate_on_simplex(monomial((1, 0, 0)), unit_simplex(3), r)


@pytest.mark.parametrize("d", range(0, 13))
def test_level_covers_degree(d):
    s = gm_level(d)
    assert 2 * s + 1 >= d
    assert prepare_grundmann_moller(d, 2).degree >= d


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
@pytest.mark.parametrize("d", [0, 1, 4, 7, 12])
def test_rule_invariants(n, d):
    r = prepare_grundmann_moller(d, n)
    s = r.level
    assert len(r.points) == len(r.weights) == sum(math.comb(n + s - i, n) for i in range(s + 1))
    assert abs(r.weights.sum() - 1) <= 1e-10
    assert np.all(r.points > 0)
    assert np.allclose(r.points.sum(axis=1), 1)
    if s >= 1:
        assert np.any(r.weights < 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_weights_sum_exactly_in_rationals(n):
    # recompute the rule's weights with Fractions and sum them exactly
    s = 3
    exact = 2 * s + 1
    total = Fraction(0)
    for i in range(s + 1):
        denom = exact + n - 2 * i
        w = Fraction((-1) ** i * denom**exact * math.factorial(n),
                     2 ** (2 * s) * math.factorial(i) * math.factorial(exact + n - i))
        total += w * math.comb(n + s - i, n)
    assert total == 1


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 4), d=st.integers(0, 10))
def test_exact_on_random_monomials(seed, n, d):
    rng = np.random.default_rng(seed)
    alpha = rng.multinomial(d, np.ones(n + 1) / (n + 1))[:n]
    r = prepare_grundmann_moller(d, n)
    got = integrate_on_simplex(monomial(alpha), unit_simplex(n), r)
    want = float(dirichlet(alpha))
    assert abs(got - want) <= 1e-9 * want


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 3), d=st.integers(0, 8))
def test_affine_invariance(seed, n, d):
    # int over A(S) of q(A^-1 y) dy = |det A| int_S q
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    det = abs(np.linalg.det(A))
    if det < 0.1:
        return
    alpha = rng.multinomial(d, np.ones(n + 1) / (n + 1))[:n]
    q = monomial(alpha)
    V = unit_simplex(n) @ A.T
    r = prepare_grundmann_moller(d, n)

    class Pulled:
        degree = q.degree

        @staticmethod
        def evaluate(Y):
            return q.evaluate(np.linalg.solve(A, np.atleast_2d(Y).T).T)

    got = integrate_on_simplex(Pulled, V, r)
    want = det * float(dirichlet(alpha))
    assert abs(got - want) <= 1e-9 * want
    assert simplex_volume(V) == pytest.approx(det / math.factorial(n))


def test_batch_size_does_not_change_result():
    r = prepare_grundmann_moller(10, 3)
    q = monomial((4, 3, 3))
    a = integrate_on_simplex(q, unit_simplex(3), r, batch_size=7)
    b = integrate_on_simplex(q, unit_simplex(3), r, batch_size=100000)
    assert a == pytest.approx(b, rel=1e-14)


def test_stable_sum_examples():
    assert stable_sum([1e16, 1.0, -1e16]) == 1.0
    assert stable_sum([]) == 0.0
    assert math.isnan(stable_sum([1.0, float("nan")]))


def test_stable_sum_axis():
    x = np.array([[1e16, 3.0], [1.0, 4.0], [-1e16, 5.0]])
    assert np.array_equal(stable_sum(x, axis=0), [1.0, 12.0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_stable_sum_matches_exact_reference(seed):
    x = np.random.default_rng(seed).uniform(-1, 1, 10_000)
    exact = float(sum(Fraction(v) for v in x))
    assert abs(stable_sum(x) - exact) <= 1e-12 * max(abs(exact), 1e-300)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e12, 1e12, allow_nan=False), max_size=200))
def test_stable_sum_order_insensitive(values):
    a = stable_sum(values)
    b = stable_sum(values[::-1])
    exact = float(sum(Fraction(v) for v in values))
    scale = sum(abs(v) for v in values) or 1.0
    assert abs(a - b) <= 1e-15 * scale
    assert abs(a - exact) <= 1e-15 * scale


def test_rule_text_dump():
    text = prepare_grundmann_moller(3, 2).to_text()
    lines = text.strip().splitlines()
    assert lines[0].startswith("# grundmann-moller dim=2 degree=3")
    assert len(lines) == 1 + len(prepare_grundmann_moller(3, 2))
