"""Boolean combinations of linear inequalities and their convex decomposition.

Concrete syntax (S-expressions, ``#`` starts a comment)::

    expr    := (and expr+) | (or expr+) | (not expr) | (REL linexpr linexpr)
               | true | false
    REL     := <= | < | >= | >
    linexpr := NUMBER | yK | (+ linexpr+) | (- linexpr+) | (* linexpr linexpr)

Products must have a constant factor. A file holds one formula, optionally
preceded by a ``(box lo1 hi1 ... lon hin)`` header.
"""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .exceptions import (
    Degenerate,
    DimensionError,
    EmptyPolytope,
    ParseError,
    TooManyRegions,
    Unbounded,
)
from .geometry import Box, Polytope, h_to_v, interior_radius, triangulate, _simplices_volumes

logger = logging.getLogger(__name__)

RELATIONS = ("<=", "<", ">=", ">")
_NEGATED = {"<=": ">", "<": ">=", ">=": "<", ">": "<="}
DEFAULT_MAX_REGIONS = 100_000


@dataclass(frozen=True)
class Atom:
    """``coeffs . y REL const``."""

    coeffs: tuple
    rel: str
    const: float

    def __post_init__(self):
        if self.rel not in RELATIONS:
            raise ValueError(f"unsupported relation {self.rel!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "const", float(self.const))
        if not any(self.coeffs):
            raise ValueError("atom has no variables")

    @property
    def n(self):
        return len(self.coeffs)

    def negate(self):
        return Atom(self.coeffs, _NEGATED[self.rel], self.const)

    def halfspace(self):
        """``(a, b)`` with the atom equivalent to ``a . y <= b`` up to its boundary."""
        a = np.array(self.coeffs)
        if self.rel in ("<=", "<"):
            return a, self.const
        return -a, -self.const

    def holds(self, Y):
        lhs = np.atleast_2d(Y) @ np.array(self.coeffs)
        return {
            "<=": lhs <= self.const,
            "<": lhs < self.const,
            ">=": lhs >= self.const,
            ">": lhs > self.const,
        }[self.rel]


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("'and' needs at least one operand")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("'or' needs at least one operand")


Formula = Union[Atom, Const, Not, And, Or]
TRUE = Const(True)
FALSE = Const(False)


def atoms(f):
    """Atoms in document order (with repetitions)."""
    if isinstance(f, Atom):
        return [f]
    if isinstance(f, Const):
        return []
    if isinstance(f, Not):
        return atoms(f.child)
    return [a for c in f.children for a in atoms(c)]


def dimension(f):
    dims = {a.n for a in atoms(f)}
    if len(dims) > 1:
        raise DimensionError(f"atoms of mixed dimension {sorted(dims)}")
    return dims.pop() if dims else None


def holds(f, Y):
    """Truth of ``f`` at each row of ``Y`` (strict relations respected)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if isinstance(f, Atom):
        return f.holds(Y)
    if isinstance(f, Const):
        return np.full(Y.shape[0], f.value)
    if isinstance(f, Not):
        return ~holds(f.child, Y)
    parts = [holds(c, Y) for c in f.children]
    return np.logical_and.reduce(parts) if isinstance(f, And) else np.logical_or.reduce(parts)


def nnf(f):
    """Push negations down to atoms and fold constants."""
    return _nnf(f, False)


def _nnf(f, negate):
    if isinstance(f, Atom):
        return f.negate() if negate else f
    if isinstance(f, Const):
        return Const(f.value != negate)
    if isinstance(f, Not):
        return _nnf(f.child, not negate)
    kids = [_nnf(c, negate) for c in f.children]
    conj = isinstance(f, And) != negate
    absorbing, neutral = (FALSE, TRUE) if conj else (TRUE, FALSE)
    if absorbing in kids:
        return absorbing
    kids = [k for k in kids if k != neutral]
    if not kids:
        return neutral
    if len(kids) == 1:
        return kids[0]
    return And(kids) if conj else Or(kids)


def conjoin(f, g):
    df, dg = dimension(f), dimension(g)
    if df is not None and dg is not None and df != dg:
        raise DimensionError(f"cannot conjoin formulas over {df} and {dg} variables")
    return nnf(And((f, g)))


def box_formula(box: Box):
    n = box.dim
    parts = []
    for j in range(n):
        e = tuple(1.0 if k == j else 0.0 for k in range(n))
        parts.append(Atom(e, ">=", box.lo[j]))
        parts.append(Atom(e, "<=", box.hi[j]))
    return And(parts)


def substitute(f, fixed, n=None):
    """Replace variables ``{index: value}`` by constants; result is over the free variables."""
    n = n if n is not None else dimension(f)
    free = [j for j in range(n) if j not in fixed]

    def go(g):
        if isinstance(g, Atom):
            a = np.array(g.coeffs)
            shift = sum(a[j] * v for j, v in fixed.items())
            rest = a[free]
            const = g.const - shift
            if not np.any(rest):
                return Const(bool(Atom((1.0,), g.rel, const).holds(np.zeros((1, 1)))[0]))
            return Atom(tuple(rest), g.rel, const)
        if isinstance(g, Const):
            return g
        if isinstance(g, Not):
            return Not(go(g.child))
        return type(g)([go(c) for c in g.children])

    return nnf(go(f))


# ---------------------------------------------------------------- printing


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _linexpr(coeffs):
    terms = []
    for j, c in enumerate(coeffs):
        if c == 0:
            continue
        terms.append(f"y{j + 1}" if c == 1 else f"(* {_fmt(c)} y{j + 1})")
    return terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"


def to_sexpr(f) -> str:
    if isinstance(f, Atom):
        return f"({f.rel} {_linexpr(f.coeffs)} {_fmt(f.const)})"
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return f"(not {to_sexpr(f.child)})"
    op = "and" if isinstance(f, And) else "or"
    return f"({op} " + " ".join(to_sexpr(c) for c in f.children) + ")"


def format_file(f, box: Box | None = None) -> str:
    out = []
    if box is not None:
        out.append("(box " + " ".join(_fmt(x) for x in box.flat()) + ")")
    out.append(to_sexpr(f))
    return "\n".join(out) + "\n"


def formula_hash(f, box: Box | None = None) -> str:
    return hashlib.sha256(format_file(f, box).encode()).hexdigest()


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(#[^\n]*)|(\()|(\))|([^\s()#]+))")
_VAR = re.compile(r"y([1-9][0-9]*)$")


@dataclass
class _Tok:
    text: str
    line: int
    col: int


def _tokenize(text):
    toks = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        start = m.start(m.lastindex) if m.lastindex else m.end()
        skipped = text[pos:start]
        for i, ch in enumerate(skipped):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        if m.lastindex and m.lastindex > 1:
            toks.append(_Tok(m.group(m.lastindex), line, start - line_start + 1))
        pos = m.end()
    return toks


def _read(toks):
    """Nested lists of tokens."""
    stack = [[]]
    opens = []
    for t in toks:
        if t.text == "(":
            stack.append([])
            opens.append(t)
        elif t.text == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", t.line, t.col)
            node = stack.pop()
            node_open = opens.pop()
            stack[-1].append((node_open, node))
        else:
            stack[-1].append(t)
    if len(stack) != 1:
        raise ParseError("unbalanced '('", opens[-1].line, opens[-1].col)
    return stack[0]


def _pos(node):
    return (node[0].line, node[0].col) if isinstance(node, tuple) else (node.line, node.col)


class _Builder:
    def __init__(self):
        self.max_var = 0

    def linexpr(self, node):
        """``({var_index: coeff}, constant)``."""
        if isinstance(node, _Tok):
            m = _VAR.match(node.text)
            if m:
                j = int(m.group(1))
                self.max_var = max(self.max_var, j)
                return {j - 1: 1.0}, 0.0
            try:
                return {}, float(node.text)
            except ValueError:
                raise ParseError(f"unknown symbol {node.text!r}", node.line, node.col) from None
        head, items = node
        if not items or not isinstance(items[0], _Tok):
            raise ParseError("expected an operator", head.line, head.col)
        op, args = items[0].text, [self.linexpr(a) for a in items[1:]]
        if not args:
            raise ParseError(f"'{op}' needs operands", head.line, head.col)
        if op == "+":
            return _lin_sum(args)
        if op == "-":
            if len(args) == 1:
                return _lin_scale(args[0], -1.0)
            return _lin_sum([args[0]] + [_lin_scale(a, -1.0) for a in args[1:]])
        if op == "*":
            out = args[0]
            for a in args[1:]:
                if not out[0]:
                    out = _lin_scale(a, out[1])
                elif not a[0]:
                    out = _lin_scale(out, a[1])
                else:
                    raise ParseError("nonlinear product", head.line, head.col)
            return out
        raise ParseError(f"unknown arithmetic operator {op!r}", items[0].line, items[0].col)

    def formula(self, node):
        if isinstance(node, _Tok):
            if node.text == "true":
                return TRUE
            if node.text == "false":
                return FALSE
            raise ParseError(f"expected a formula, got {node.text!r}", node.line, node.col)
        head, items = node
        if not items or not isinstance(items[0], _Tok):
            raise ParseError("expected a connective or relation", head.line, head.col)
        op = items[0].text
        args = items[1:]
        if op in ("and", "or"):
            if not args:
                raise ParseError(f"'{op}' needs at least one operand", head.line, head.col)
            kids = [self.formula(a) for a in args]
            return And(kids) if op == "and" else Or(kids)
        if op == "not":
            if len(args) != 1:
                raise ParseError("'not' takes exactly one operand", head.line, head.col)
            return Not(self.formula(args[0]))
        if op == "=":
            raise ParseError("equality atoms bound zero-volume regions and are not supported",
                             head.line, head.col)
        if op in RELATIONS:
            if len(args) != 2:
                raise ParseError(f"'{op}' takes two operands", head.line, head.col)
            lc, lk = self.linexpr(args[0])
            rc, rk = self.linexpr(args[1])
            coeffs = dict(lc)
            for j, c in rc.items():
                coeffs[j] = coeffs.get(j, 0.0) - c
            return ("atom", coeffs, op, rk - lk, _pos(node))
        raise ParseError(f"unknown connective {op!r}", items[0].line, items[0].col)


def _lin_sum(args):
    coeffs, const = {}, 0.0
    for c, k in args:
        for j, v in c.items():
            coeffs[j] = coeffs.get(j, 0.0) + v
        const += k
    return coeffs, const


def _lin_scale(arg, s):
    return {j: v * s for j, v in arg[0].items()}, arg[1] * s


def _finish(raw, n):
    if isinstance(raw, tuple) and raw and raw[0] == "atom":
        _, coeffs, rel, const, (line, col) = raw
        vec = [0.0] * n
        for j, c in coeffs.items():
            vec[j] = c
        if not any(vec):
            return Const(bool(Atom((1.0,), rel, const).holds(np.zeros((1, 1)))[0]))
        return Atom(tuple(vec), rel, const)
    if isinstance(raw, (Const, Atom)):
        return raw
    if isinstance(raw, Not):
        return Not(_finish(raw.child, n))
    return type(raw)([_finish(c, n) for c in raw.children])


def parse_file(text: str, n: int | None = None):
    """Parse a formula file; returns ``(formula, box or None)``."""
    forms = _read(_tokenize(text))
    box = None
    body = []
    for form in forms:
        if isinstance(form, tuple) and form[1] and isinstance(form[1][0], _Tok) and form[1][0].text == "box":
            if box is not None:
                raise ParseError("duplicate box header", *_pos(form))
            try:
                box = Box.from_flat([t.text for t in form[1][1:]])
            except (ValueError, AttributeError) as exc:
                raise ParseError(f"bad box: {exc}", *_pos(form)) from None
        else:
            body.append(form)
    if len(body) != 1:
        where = _pos(body[1]) if len(body) > 1 else (1, 1)
        raise ParseError(f"expected exactly one formula, found {len(body)}", *where)
    b = _Builder()
    raw = b.formula(body[0])
    dim = b.max_var
    if box is not None:
        if dim > box.dim:
            raise DimensionError(f"formula uses y{dim} but the box has {box.dim} dimensions")
        dim = box.dim
    if n is not None:
        if dim > n:
            raise DimensionError(f"formula uses {dim} variables, expected {n}")
        dim = n
    if dim == 0:
        raise DimensionError("formula mentions no variables and has no box")
    return _finish(raw, dim), box


def parse(text: str, n: int | None = None):
    return parse_file(text, n)[0]


# ---------------------------------------------------------------- decomposition


@dataclass
class ConvexDecomposition:
    """Interior-disjoint convex regions whose union is ``source`` within ``box``."""

    regions: list
    source: object
    box: Box
    dropped: int = 0
    _simplices: list | None = field(default=None, repr=False)

    @property
    def empty(self):
        return not self.regions

    def simplices(self):
        """Per-region simplex arrays of shape ``(k, n+1, n)``."""
        if self._simplices is None:
            out = []
            for r in self.regions:
                out.append(triangulate(h_to_v(r, check_bounded=False), return_array=True))
            self._simplices = out
        return self._simplices

    def volume(self):
        return float(sum(_simplices_volumes(S).sum() for S in self.simplices() if len(S)))

    def contains(self, Y, tol=0.0):
        Y = np.atleast_2d(Y)
        out = np.zeros(Y.shape[0], dtype=bool)
        for r in self.regions:
            out |= r.contains(Y, tol)
        return out


def _literal_key(atom):
    a, b = atom.halfspace()
    scale = np.max(np.abs(a))
    a, b = a / scale, b / scale
    first = a[np.nonzero(a)[0][0]]
    positive = bool(first > 0)
    if not positive:
        a, b = -a, -b
    key = tuple(np.round(np.append(a, b), 12))
    return key, positive, (a, b)


def _to_literals(f, table):
    """NNF formula into tuples ``("lit", var, polarity)``/``("and"|"or", kids)``."""
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Atom):
        key, positive, hs = _literal_key(f)
        if key not in table:
            table[key] = (len(table), hs)
        return ("lit", table[key][0], positive)
    kids = tuple(_to_literals(c, table) for c in f.children)
    return ("and" if isinstance(f, And) else "or", kids)


def _simplify(node, var, value):
    if node is True or node is False:
        return node
    if node[0] == "lit":
        return bool(node[2] == value) if node[1] == var else node
    conj = node[0] == "and"
    kids = []
    for k in node[1]:
        s = _simplify(k, var, value)
        if s is True or s is False:
            if s != conj:
                return s
            continue
        kids.append(s)
    if not kids:
        return conj
    if len(kids) == 1:
        return kids[0]
    return (node[0], tuple(kids))


def _first_var(node):
    if node[0] == "lit":
        return node[1]
    for k in node[1]:
        if k is not True and k is not False:
            return _first_var(k)
    return None


def decompose(f, box: Box, max_regions: int = DEFAULT_MAX_REGIONS, min_radius: float | None = None):
    """Disjoint bounded convex regions covering ``f`` within ``box``.

    Atoms are split in document order: the branch ``A`` is explored before
    ``not A``, and every region is a partial assignment that already
    entails ``f``. Branches without an interior point are pruned.
    """
    n = box.dim
    d = dimension(f)
    if d is not None and d != n:
        raise DimensionError(f"formula has {d} variables, box has {n}")
    table = {}
    root = _to_literals(nnf(f), table)
    halfspaces = [hs for _, hs in sorted(table.values(), key=lambda t: t[0])]
    bp = box.to_polytope()
    base_A = [row for row in bp.A]
    base_b = list(bp.b)
    if min_radius is None:
        min_radius = 1e-9 * (1.0 + float(np.max(np.abs(np.concatenate([box.lo, box.hi])))))
    regions = []
    dropped = 0

    def emit(A_rows, b_rows):
        nonlocal dropped
        if len(regions) >= max_regions:
            raise TooManyRegions(f"more than {max_regions} regions")
        p = Polytope(np.array(A_rows), np.array(b_rows))
        try:
            h_to_v(p, check_bounded=False)
        except (Degenerate, EmptyPolytope, Unbounded):
            dropped += 1
            return
        regions.append(p)

    def rec(node, A_rows, b_rows):
        if node is False:
            return
        if node is True:
            emit(A_rows, b_rows)
            return
        var = _first_var(node)
        a, b = halfspaces[var]
        for value in (True, False):
            row, rhs = (a, b) if value else (-a, -b)
            A2, b2 = A_rows + [row], b_rows + [rhs]
            if interior_radius(np.array(A2), np.array(b2)) <= min_radius:
                continue
            rec(_simplify(node, var, value), A2, b2)

    if root is not False and interior_radius(np.array(base_A), np.array(base_b)) > min_radius:
        rec(root, base_A, base_b)
    if not regions:
        logger.info("decomposition of %s is empty", to_sexpr(f)[:80])
    return ConvexDecomposition(regions=regions, source=f, box=box, dropped=dropped)


def region_stats(d: ConvexDecomposition):
    S = d.simplices() if d.regions else []
    per = [len(s) for s in S]
    return {
        "regions": len(d.regions),
        "simplices": int(sum(per)),
        "per_region_simplices": per,
        "volume": d.volume() if d.regions else 0.0,
        "dropped": d.dropped,
    }


count_regions = region_stats
