import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmipoly.exceptions import DimensionError, ParseError, TooManyRegions
from wmipoly.formula import (
    FALSE,
    And,
    Atom,
    Const,
    Not,
    Or,
    atoms,
    box_formula,
    conjoin,
    decompose,
    format_file,
    holds,
    nnf,
    parse,
    parse_file,
    region_stats,
    substitute,
)
from wmipoly.geometry import Box, interior_radius


def strips(k, box_lo=-1.0, box_hi=1.0):
    """``k`` disjoint vertical strips of width 0.2 inside [-1, 1]^2."""
    edges = np.linspace(box_lo, box_hi, 2 * k + 1)
    cells = []
    for i in range(k):
        lo, hi = edges[2 * i], edges[2 * i + 1]
        cells.append(And([Atom((1.0, 0.0), ">=", lo), Atom((1.0, 0.0), "<=", hi)]))
    return Or(cells)


def pairwise_disjoint(regions, tol=1e-7):
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            A = np.vstack([regions[i].A, regions[j].A])
            b = np.concatenate([regions[i].b, regions[j].b])
            if interior_radius(A, b) > tol:
                return False
    return True


def test_parse_two_atom_conjunction():
    f = parse("(and (<= y1 1) (<= (- y1) 1))")
    assert isinstance(f, And) and len(f.children) == 2
    assert f.children[0] == Atom((1.0,), "<=", 1.0)
    assert f.children[1] == Atom((-1.0,), "<=", 1.0)


def test_parse_square_minus_triangle(smt):
    f, box = smt
    assert box.flat() == [-1, 1, -1, 1]
    assert isinstance(f, And) and len(f.children) == 5
    assert sum(isinstance(c, Atom) for c in f.children) == 4
    assert isinstance(f.children[4], Or) and len(f.children[4].children) == 3
    assert f.children[4].children[1] == Atom((-2.0, 1.0), ">", 0.5)


@pytest.mark.parametrize("text, line, col", [
    ("(or)", 1, 1),
    ("(and (<= y1 1)\n  (foo y1 2))", 2, 4),
    ("(<= (* y1 y2) 1)", 1, 5),
    ("(<= y1 1", 1, 1),
    ("(<= y1 1))", 1, 10),
    ("(= y1 1)", 1, 1),
])
def test_parse_errors_carry_position(text, line, col):
    with pytest.raises(ParseError) as e:
        parse(text)
    assert (e.value.line, e.value.column) == (line, col)


def test_box_dimension_mismatch():
    with pytest.raises(DimensionError):
        parse_file("(box 0 1)\n(<= y2 1)")


def test_print_parse_round_trip(smt):
    f, box = smt
    g, box2 = parse_file(format_file(f, box))
    assert g == f and box2.flat() == box.flat()


def test_single_atom_half_box():
    d = decompose(Atom((1.0, 0.0), "<=", 0.0), Box([-1, -1], [1, 1]))
    assert len(d.regions) == 1
    assert d.volume() == pytest.approx(2.0)


def test_disjoint_strips_one_region_each():
    d = decompose(strips(3), Box([-1, -1], [1, 1]))
    assert len(d.regions) == 3
    assert pairwise_disjoint(d.regions)


def test_square_minus_triangle_area(smt):
    d = decompose(*smt)
    assert d.volume() == pytest.approx(3.5, abs=1e-12)
    assert pairwise_disjoint(d.regions)


def test_conjoin_examples(smt):
    f, box = smt
    assert decompose(conjoin(f, box_formula(box)), box).volume() == pytest.approx(3.5)
    bottom = conjoin(box_formula(box), Atom((0.0, 1.0), "<=", -0.5))
    assert decompose(bottom, box).volume() == pytest.approx(1.0)
    triangle = And([Atom((0.0, 1.0), ">=", -0.5), Atom((-2.0, 1.0), "<=", 0.5), Atom((2.0, 1.0), "<=", 0.5)])
    assert decompose(conjoin(f, triangle), box).empty
    with pytest.raises(DimensionError):
        conjoin(f, Atom((1.0,), "<=", 0))


def test_region_stats():
    box = Box([-1, -1], [1, 1])
    s = region_stats(decompose(box_formula(box), box))
    assert (s["regions"], s["simplices"]) == (1, 2)
    assert s["volume"] == pytest.approx(4.0)
    empty = region_stats(decompose(FALSE, box))
    assert (empty["regions"], empty["simplices"], empty["volume"]) == (0, 0, 0.0)


def test_nnf_and_holds():
    a = Atom((1.0, 0.0), "<", 0.0)
    f = Not(And([a, Not(Atom((0.0, 1.0), ">=", 1.0))]))
    g = nnf(f)
    assert g == Or([Atom((1.0, 0.0), ">=", 0.0), Atom((0.0, 1.0), ">=", 1.0)])
    Y = np.random.default_rng(0).uniform(-2, 2, (500, 2))
    assert np.array_equal(holds(f, Y), holds(g, Y))
    assert nnf(And([Const(True), a])) == a


def test_substitute_fixes_variable(smt):
    f, _ = smt
    g = substitute(f, {1: 0.0}, 2)
    Y = np.linspace(-1, 1, 401)[:, None]
    full = np.hstack([Y, np.zeros_like(Y)])
    assert np.array_equal(holds(g, Y), holds(f, full))


def test_region_cap():
    with pytest.raises(TooManyRegions):
        decompose(strips(5), Box([-1, -1], [1, 1]), max_regions=3)


def random_formula(rng, depth, n=2):
    if depth == 0 or rng.random() < 0.3:
        a = rng.standard_normal(n)
        return Atom(tuple(a), str(rng.choice(["<=", ">"])), float(rng.uniform(-0.5, 0.5)))
    kids = [random_formula(rng, depth - 1, n) for _ in range(rng.integers(2, 4))]
    node = And(kids) if rng.random() < 0.5 else Or(kids)
    return Not(node) if rng.random() < 0.2 else node


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_decomposition_is_sound_and_disjoint(seed):
    rng = np.random.default_rng(seed)
    box = Box([-1, -1], [1, 1])
    f = random_formula(rng, 3)
    d = decompose(f, box)
    Y = rng.uniform(-1, 1, (20_000, 2))
    inside = d.contains(Y)
    truth = holds(f, Y)
    # boundary points may disagree; nothing else may
    near = np.zeros(len(Y), dtype=bool)
    for a in atoms(f):
        c = np.array(a.coeffs)
        near |= np.abs(Y @ c - a.const) <= 1e-9 * (1 + np.linalg.norm(c))
    assert np.array_equal(inside[~near], truth[~near])
    assert pairwise_disjoint(d.regions)
    assert d.volume() == pytest.approx(4 * truth.mean(), abs=4 * 4 * np.sqrt(0.25 / len(Y)) + 1e-9)


@pytest.mark.parametrize("k", [1, 2, 4, 7])
def test_pure_disjunction_at_most_k_regions(k):
    rng = np.random.default_rng(k)
    f = Or([Atom(tuple(rng.standard_normal(2)), "<=", float(rng.uniform(-1, 0))) for _ in range(k)])
    assert len(decompose(f, Box([-1, -1], [1, 1])).regions) <= k
