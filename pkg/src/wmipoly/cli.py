"""Command line: compile, integrate, normalize, query, sample, fit and benchmarks.

Results go to stdout, diagnostics to stderr. Exit codes: 0 ok, 2 parse
error, 3 geometry or decomposition error, 4 numeric error, 5 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cubature import prepare_grundmann_moller
from .density import ConstrainedDensity, FitConfig, fit, normalize, spec_from_dict
from .exceptions import DataViolatesConstraint, ParseError, WMIError
from .formula import ConvexDecomposition, decompose, format_file, holds, parse_file
from .geometry import Box, Polytope
from .integrator import CompiledIntegral, compile_decomposition, compile_integral, gasp_integrate, integrate_formula
from .nstar_bench import NStarSpec, nstar_dataset, nstar_formula, random_simplex_problems
from .polynomial import Polynomial, SosPolynomial, SplineDensitySpec, monomials_up_to

logger = logging.getLogger("wmipoly")

EXIT_USAGE = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(x, full):
    return repr(float(x)) if full else format(float(x), ".12g")


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _box_arg(text):
    if text is None:
        return None
    try:
        return Box.from_flat(text.replace(",", " ").split())
    except ValueError as exc:
        raise UsageError(f"bad --box: {exc}") from None


def _load_formula(args, required=True):
    if args.formula is None:
        if required:
            raise UsageError("--formula is required")
        return None, _box_arg(args.box)
    f, box = parse_file(_read(args.formula))
    override = _box_arg(args.box)
    box = override if override is not None else box
    if box is None:
        raise UsageError("no box: add a (box ...) header to the formula file or pass --box")
    return f, box


def load_data(path, n=None):
    """Whitespace- or comma-separated numeric rows; ``#`` starts a comment."""
    text = _read(path)
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.replace(",", " ").split()
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            if not rows and lineno == 1:
                continue  # header line
            raise ParseError(f"non-numeric value in {path}", lineno, 1) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(f"row has {len(rows[-1])} columns, expected {len(rows[0])}", lineno, 1)
    X = np.array(rows, dtype=float).reshape(len(rows), -1 if rows else (n or 0))
    if n is not None and X.shape[0] and X.shape[1] != n:
        raise ParseError(f"data has {X.shape[1]} columns, expected {n}", 1, 1)
    return X


def _csv_rows(X, full):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(X):
        w.writerow([_fmt(v, full) for v in row])
    return buf.getvalue()


def _load_spec(path):
    try:
        return spec_from_dict(json.loads(_read(path)))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"bad spec file {path}: {exc}", 1, 1) from None


def _load_density(args):
    if args.density:
        try:
            data = json.loads(_read(args.density))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad density file: {exc.msg}", exc.lineno, exc.colno) from None
        return ConstrainedDensity.from_dict(data, cache_dir=args.cache_dir, threads=args.threads)
    if args.spec:
        f, box = _load_formula(args)
        return normalize(_load_spec(args.spec), f, box, cache_dir=args.cache_dir, threads=args.threads)
    raise UsageError("pass --density, or --spec with --formula")


def _monomials(args, n):
    if args.monomials:
        E = load_data(args.monomials).astype(np.int64)
        if E.shape[1] != n:
            raise ParseError(f"monomials need {n} exponents each", 1, 1)
        return E
    if args.degree is None:
        raise UsageError("pass --degree or --monomials")
    return monomials_up_to(n, args.degree)


# ---------------------------------------------------------------- commands


def cmd_compile(args):
    f, box = _load_formula(args)
    E = _monomials(args, box.dim)
    ci = compile_integral(E, f, box, cache_dir=args.cache_dir, threads=args.threads)
    logger.info("compiled %d monomials over %d regions (%s)", len(ci), ci.n_regions, ci.meta.get("cache"))
    _write(args.out, ci.to_text())


def cmd_integrate(args):
    if args.poly:
        q = Polynomial.from_text(_read(args.poly))
    else:
        q = None
    if args.eta:
        ci = CompiledIntegral.from_text(_read(args.eta))
        q = q if q is not None else Polynomial.constant(1.0, ci.n)
        value = ci.integrate(q)
    elif args.polytope:
        P = Polytope.from_text(_read(args.polytope))
        q = q if q is not None else Polynomial.constant(1.0, P.dim)
        value = gasp_integrate(q, P)
    else:
        f, box = _load_formula(args)
        q = q if q is not None else Polynomial.constant(1.0, box.dim)
        value = integrate_formula(q, f, box)
    print(_fmt(value, args.full_precision))


def cmd_normalize(args):
    d = _load_density(args)
    if args.out:
        d.save(args.out, eta_cache=args.cache_dir)
    print(_fmt(d.Z_, args.full_precision))


def cmd_query(args):
    d = _load_density(args)
    if not args.query:
        raise UsageError("--query is required")
    gamma, _ = parse_file(_read(args.query), n=d.n_features_in_)
    print(_fmt(d.query_probability(gamma), args.full_precision))


def cmd_sample(args):
    d = _load_density(args)
    order = None if args.order is None else [int(t) for t in args.order.split(",")]
    eps = None if args.eps is None else args.eps
    Y = d.sample(args.n, random_state=args.seed, eps=eps, order=order)
    _write(args.out, _csv_rows(Y, args.full_precision))


def cmd_fit(args):
    f, box = _load_formula(args)
    if not args.data:
        raise UsageError("--data is required")
    X = load_data(args.data, box.dim)
    rng = np.random.default_rng(args.seed)
    if args.spec:
        template = _load_spec(args.spec)
    elif args.family == "spline":
        template = SplineDensitySpec.constant(box, args.bins, args.components, seed=args.seed, jitter=args.jitter)
    else:
        E = monomials_up_to(box.dim, args.degree if args.degree is not None else 2)
        U = np.zeros((args.components, len(E)))
        U[:, 0] = 1.0
        U += args.jitter * rng.standard_normal(U.shape)
        template = SosPolynomial.from_matrix(E, U, np.full(args.components, 1.0 / args.components))
    cfg = FitConfig(max_iter=args.max_iter, tol=args.tol, penalty_threshold=args.penalty_threshold,
                    reparametrize=args.reparametrize, prefit_scale=args.prefit_scale)
    d, report = fit(template, X, f, box, cfg, cache_dir=args.cache_dir, threads=args.threads)
    print(f"iterations={report.iterations} loss={report.final_loss:.12g} "
          f"penalty_activations={report.penalty_activations} {report.message}", file=sys.stderr)
    if args.out:
        d.save(args.out, eta_cache=args.cache_dir)
    print(_fmt(report.final_avg_loglik, args.full_precision))


def cmd_check(args):
    f, box = _load_formula(args)
    if not args.data:
        raise UsageError("--data is required")
    X = load_data(args.data, box.dim)
    ok = holds(f, X) & box.contains(X) if len(X) else np.zeros(0, dtype=bool)
    bad = np.flatnonzero(~ok)
    print(f"{len(X) - bad.size} {len(X)}")
    if bad.size:
        raise DataViolatesConstraint(bad.tolist())


def cmd_gen_nstar(args):
    spec = NStarSpec(args.N)
    f, box = nstar_formula(spec)
    text = format_file(f, box)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.data_out:
        loc = None if args.location is None else [float(t) for t in args.location.split(",")]
        if args.mode == "cauchy-pairs":
            x, y = nstar_dataset(spec, args.mode, seed=args.seed, count=args.count)
            Path(args.data_out).write_text(_csv_rows(np.hstack([x, y]), args.full_precision))
        else:
            X = nstar_dataset(spec, args.mode, seed=args.seed, count=args.count, location=loc)
            Path(args.data_out).write_text(_csv_rows(X, args.full_precision))


def cmd_gen_simplices(args):
    prob = random_simplex_problems(args.dim, args.degree, args.count, seed=args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for i, S in enumerate(prob.simplices):
        (out / f"simplex_{i}.txt").write_text(Polytope.from_simplex(S).to_text())
        (out / f"simplex_{i}.vertices").write_text(_csv_rows(S, True))
    (out / "polynomial.txt").write_text(prob.polynomial.to_text())
    print(len(prob.simplices))


def amortization_curve(dim, degree, count, evaluations, seed=0):
    """Rows ``(k, direct_seconds, amortized_seconds)``.

    Direct: ``k`` polynomials, each integrated from the H-description of
    every polytope. Amortized: one compile plus a single batched evaluation
    of the same ``k`` coefficient vectors.
    """
    prob = random_simplex_problems(dim, degree, count, seed=seed)
    polys = prob.polytopes
    E = monomials_up_to(dim, degree)
    rng = np.random.default_rng(seed + 1)
    kmax = max(evaluations)
    lams = rng.standard_normal((kmax, len(E)))
    rows = []
    for k in evaluations:
        t0 = time.perf_counter()
        for lam in lams[:k]:
            q = Polynomial(E, lam)
            sum(gasp_integrate(q, P) for P in polys)
        direct = time.perf_counter() - t0
        t0 = time.perf_counter()
        eta = compile_decomposition(E, ConvexDecomposition(regions=polys, source=None, box=None))
        _ = lams[:k] @ eta
        amort = time.perf_counter() - t0
        rows.append((k, direct, amort))
    return rows


def cmd_bench(args):
    evals = [int(t) for t in args.evaluations.split(",")]
    rows = amortization_curve(args.dim, args.degree if args.degree is not None else 8, args.count, evals,
                              seed=args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["num_evaluations", "direct_seconds", "amortized_seconds"])
    for k, d, a in rows:
        w.writerow([k, _fmt(d, args.full_precision), _fmt(a, args.full_precision)])
    _write(args.out, buf.getvalue())


def cmd_cubature(args):
    rule = prepare_grundmann_moller(args.degree if args.degree is not None else 1, args.dim)
    _write(args.out, rule.to_text())


def cmd_decompose(args):
    f, box = _load_formula(args)
    d = decompose(f, box)
    S = d.simplices()
    print(f"regions={len(d.regions)} simplices={sum(len(s) for s in S)} "
          f"volume={_fmt(d.volume(), args.full_precision)}")


# ---------------------------------------------------------------- parser


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--formula", help="formula file (s-expression, optional (box ...) header)")
    p.add_argument("--box", help="bounding box 'lo1 hi1 lo2 hi2 ...'")
    p.add_argument("--degree", type=int)
    p.add_argument("--spec", help="density spec JSON")
    p.add_argument("--density", help="density JSON written by normalize or fit")
    p.add_argument("--data", help="CSV or whitespace data file")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float)
    p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = all cores")
    p.add_argument("--cache-dir", help="directory for compiled-integral caches")
    p.add_argument("--full-precision", action="store_true", help="print round-trip decimals")
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="wmipoly", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("compile", cmd_compile, "compile per-monomial integrals over a formula")
    p.add_argument("--monomials", help="file with one exponent row per monomial")
    p = add("integrate", cmd_integrate, "integrate a polynomial over a formula, polytope or compiled file")
    p.add_argument("--poly", help="polynomial file: 'coef e1 ... en' per line (default: 1)")
    p.add_argument("--polytope", help="polytope file: 'a1 ... an <= b' per line")
    p.add_argument("--eta", help="compiled-integral file")
    add("normalize", cmd_normalize, "normalize a density spec over a formula")
    p = add("query", cmd_query, "probability of a second formula under a density")
    p.add_argument("--query", help="formula file for the queried event")
    p = add("sample", cmd_sample, "draw samples from a density as CSV rows")
    p.add_argument("-n", "--n", type=int, default=1)
    p.add_argument("--order", help="comma-separated variable order, e.g. 1,0")
    p = add("fit", cmd_fit, "fit a density to data by maximum likelihood")
    p.add_argument("--family", choices=["spline", "sos"], default="spline")
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--components", type=int, default=1)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--penalty-threshold", type=float, default=10.0)
    p.add_argument("--reparametrize", action="store_true")
    p.add_argument("--prefit-scale", action="store_true")
    p = add("gen-nstar", cmd_gen_nstar, "write the N-star formula and optional data")
    p.add_argument("-N", "--N", type=int, default=7)
    p.add_argument("--mode", choices=["uniform", "cauchy-pairs", "cauchy-conditional"], default="uniform")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--data-out", help="where to write generated points")
    p.add_argument("--location", help="fixed x for cauchy-conditional, e.g. 0,5")
    p = add("gen-simplices", cmd_gen_simplices, "write disjoint random simplices and a polynomial")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--count", type=int, default=4)
    p = add("bench", cmd_bench, "amortization curve as CSV")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--evaluations", default="1,2,5,10,20,50")
    add("check", cmd_check, "count data rows that satisfy a formula")
    p = add("cubature", cmd_cubature, "dump a Grundmann-Moeller rule")
    p.add_argument("--dim", type=int, default=2)
    add("decompose", cmd_decompose, "region and simplex counts of a formula")
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults from ``--config``; explicit flags still win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        conf = json.loads(_read(args.config))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad config file: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    conf = {k.replace("-", "_"): v for k, v in conf.items()}
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(conf) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    sub.set_defaults(**conf)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _apply_config(parser, argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WMIError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # argparse exits on --help and bad flags; hand the code back to callers
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
