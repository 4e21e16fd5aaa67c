"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from wmipoly.cubature import integrate_on_simplex, prepare_grundmann_moller
from wmipoly.density import ConstrainedDensity, FitConfig, _family, _initial_theta, _objective, normalize
from wmipoly.formula import And, Atom, ConvexDecomposition, Or, atoms, box_formula, decompose, holds, parse_file
from wmipoly.geometry import Box
from wmipoly.integrator import CompiledIntegral, compile_decomposition, gasp_integrate, integrate_formula
from wmipoly.nstar_bench import NStarSpec, nstar_dataset, nstar_formula, random_simplex_problems, random_sos_polynomial
from wmipoly.polynomial import (
    HermiteSpline1D,
    Polynomial,
    SosPolynomial,
    SplineDensitySpec,
    hermite_bin_coefficients,
    monomials_up_to,
)

from conftest import SQUARE_MINUS_TRIANGLE

MC_CHUNK = 10**6
KS_CRITICAL_1PCT = 1.628


def verdict(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def dirichlet(alpha):
    num = math.prod(math.factorial(a) for a in alpha)
    return Fraction(num, math.factorial(len(alpha) + sum(alpha)))


def strips(k):
    edges = np.linspace(-1.0, 1.0, 2 * k + 1)
    return Or([And([Atom((1.0, 0.0), ">=", edges[2 * i]), Atom((1.0, 0.0), "<=", edges[2 * i + 1])])
               for i in range(k)])


def near_boundary(f, Y, tol=1e-9):
    near = np.zeros(len(Y), dtype=bool)
    for a in atoms(f):
        c = np.array(a.coeffs)
        near |= np.abs(Y @ c - a.const) <= tol * (1 + np.linalg.norm(c))
    return near


def mc_box_mean(fn, box, n, rng):
    """Mean and standard error of ``vol(box) * fn(Y)`` over ``n`` uniform draws, chunked."""
    s = s2 = 0.0
    vol = float(np.prod(box.hi - box.lo))
    for start in range(0, n, MC_CHUNK):
        m = min(MC_CHUNK, n - start)
        v = vol * fn(rng.uniform(box.lo, box.hi, (m, box.dim)))
        s += float(v.sum())
        s2 += float((v * v).sum())
    mean = s / n
    return mean, math.sqrt(max(s2 / n - mean * mean, 0.0) / n)


def test_criterion_1_cubature_exactness(capsys):
    rng = np.random.default_rng(0)
    worst, t0 = 0.0, time.perf_counter()
    for n in range(1, 7):
        unit = np.vstack([np.zeros(n), np.eye(n)])
        for d in range(13):
            rule = prepare_grundmann_moller(d, n)
            for _ in range(50):
                alpha = rng.multinomial(int(rng.integers(0, d + 1)), np.ones(n) / n)
                got = integrate_on_simplex(Polynomial([alpha], [1.0]), unit, rule)
                exact = float(dirichlet(alpha.tolist()))
                worst = max(worst, abs(got - exact) / exact)
    elapsed = time.perf_counter() - t0
    verdict(capsys, 1, worst <= 1e-9 and elapsed < 60,
            f"max rel err {worst:.2e} over 6x13x50 monomials in {elapsed:.1f}s")


def test_criterion_2_nonconvex_wmi(capsys):
    f, box = parse_file(SQUARE_MINUS_TRIANGLE)
    area = integrate_formula(Polynomial.constant(1.0, 2), f, box)
    rng = np.random.default_rng(1)
    worst_z, t0 = 0.0, time.perf_counter()
    for N in (3, 5, 7, 9, 11):
        g, gbox = nstar_formula(NStarSpec(N))
        d = decompose(g, gbox)
        polys = [random_sos_polynomial(2, 2, rng) for _ in range(6)]
        exact = [integrate_formula(q, g, gbox, decomposition=d) for q in polys]
        # one shared point stream per star, one running sum per polynomial
        n, vol = 10**7, 400.0
        s, s2 = np.zeros(len(polys)), np.zeros(len(polys))
        for _ in range(n // MC_CHUNK):
            Y = rng.uniform(-10, 10, (MC_CHUNK, 2))
            Yin = Y[holds(g, Y)]
            for i, q in enumerate(polys):
                v = vol * q(Yin)
                s[i] += v.sum()
                s2[i] += (v * v).sum()
        mean = s / n
        se = np.sqrt((s2 / n - mean**2) / n)
        worst_z = max(worst_z, float(np.max(np.abs(mean - exact) / se)))
    elapsed = time.perf_counter() - t0
    ok = abs(area - 3.5) <= 1e-9 and worst_z <= 4 and elapsed < 600
    verdict(capsys, 2, ok, f"area {area!r}; worst |z| {worst_z:.2f} over 30 SOS-over-star problems in {elapsed:.0f}s")


def test_criterion_3_amortization(capsys):
    prob = random_simplex_problems(3, 12, 4, seed=0)
    polys = prob.polytopes
    E = monomials_up_to(3, 12)
    t0 = time.perf_counter()
    ci = CompiledIntegral(E, compile_decomposition(E, ConvexDecomposition(regions=polys, source=None, box=None)), 3, 12)
    t_compile = time.perf_counter() - t0

    rng = np.random.default_rng(2)
    distinct = [prob.polynomial] + [random_sos_polynomial(3, 6, rng) for _ in range(199)]
    direct = np.array([sum(gasp_integrate(q, P) for P in polys) for q in distinct])
    L = np.tile(np.array([ci.coefficients_for(q) for q in distinct]), (50, 1))

    t0 = time.perf_counter()
    vals = ci.evaluate(L)
    t_batch = time.perf_counter() - t0
    t0 = time.perf_counter()
    for q in distinct[:10]:
        sum(gasp_integrate(q, P) for P in polys)
    t_direct10 = time.perf_counter() - t0
    t0 = time.perf_counter()
    for lam in L:
        ci.evaluate(lam)
    t_loop = time.perf_counter() - t0

    rel = np.max(np.abs(vals - np.tile(direct, 50)) / np.abs(np.tile(direct, 50)))
    ok = len(vals) == 10**4 and rel <= 1e-9 and t_batch < t_direct10 / 10
    verdict(capsys, 3, ok, f"max rel err {rel:.1e}; 1e4 evals {t_batch * 1e3:.1f}ms (looped {t_loop * 1e3:.0f}ms) "
                           f"vs 10 direct {t_direct10 * 1e3:.0f}ms; compile {t_compile * 1e3:.0f}ms")


@pytest.fixture(scope="module")
def star_fits():
    spec = NStarSpec(7)
    f, box = nstar_formula(spec)
    out = {"formula": f, "box": box, "log_area": math.log(spec.area())}
    for mode, loc in (("uniform", None), ("cauchy-conditional", [0.0, 5.0])):
        train = nstar_dataset(spec, mode, seed=0, count=3000, location=loc)
        test = nstar_dataset(spec, mode, seed=1, count=3000, location=loc)
        est = ConstrainedDensity(f, box, family="spline", n_bins=4, max_iter=500, random_state=0).fit(train)
        out[mode] = (est, test)
    return out


def test_criterion_4_samples_satisfy_constraint(star_fits, capsys):
    est, _ = star_fits["cauchy-conditional"]
    Y = est.sample(10**4, random_state=0)
    inside = holds(star_fits["formula"], Y) & star_fits["box"].contains(Y)
    verdict(capsys, 4, bool(inside.all()), f"{int(inside.sum())}/{len(Y)} samples satisfy the N=7 star")


def densities():
    """Ten normalized densities over several formulas and both families."""
    rng = np.random.default_rng(5)
    smt = parse_file(SQUARE_MINUS_TRIANGLE)
    star5, star7 = nstar_formula(NStarSpec(5)), nstar_formula(NStarSpec(7))
    square = Box([-1, -1], [1, 1])
    half = (Atom((1.0, 1.0), "<=", 0.3), square)
    stripes = (strips(3), square)
    E = monomials_up_to(2, 2)
    out = []
    for f, box in (smt, star5, half, stripes, star7):
        sos = SosPolynomial.from_matrix(E, rng.standard_normal((2, len(E))), rng.uniform(0.2, 2.0, 2))
        out.append(normalize(sos, f, box))
        spline = SplineDensitySpec.constant(box, 3, n_components=2, seed=int(rng.integers(1 << 30)), jitter=0.5)
        out.append(normalize(spline, f, box))
    return out


def test_criterion_5_normalization(capsys):
    rng = np.random.default_rng(6)
    worst = 0.0
    for d in densities():
        mean, se = mc_box_mean(lambda Y, d=d: np.exp(d.logpdf(Y)), d.box, 10**7, rng)
        worst = max(worst, abs(mean - 1.0) / se)
    verdict(capsys, 5, worst <= 4, f"worst |z| {worst:.2f} over 10 densities, 1e7 samples each")


def test_criterion_6_sampling_fidelity(capsys):
    ds = densities()
    chosen = [ds[0], ds[3], ds[9]]
    n = 10**4
    crit = KS_CRITICAL_1PCT / math.sqrt(n)
    worst = 0.0
    for i, d in enumerate(chosen):
        x = d.sample(n, random_state=10 + i)[:, 0]
        cdf = np.vectorize(lambda z, d=d: d.conditional_cdf([], float(z)))
        worst = max(worst, stats.kstest(x, cdf).statistic)
    verdict(capsys, 6, worst < crit, f"worst KS {worst:.4f} vs 1% critical {crit:.4f}")


def test_criterion_7_fit_sanity(star_fits, capsys):
    base = -star_fits["log_area"]
    uni, uni_test = star_fits["uniform"]
    peak, peak_test = star_fits["cauchy-conditional"]
    gap = abs(uni.score(uni_test) - base)
    gain = peak.score(peak_test) - base
    verdict(capsys, 7, gap <= 0.02 and gain >= 0.1,
            f"uniform held-out LL within {gap:.4f} nats of -log(area); peaked data beats uniform by {gain:.3f} nats")


def fd_rel_error(obj, theta, h=1e-5):
    _, g, _ = obj(theta)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (obj(theta + e, grad=False)[0] - obj(theta - e, grad=False)[0]) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))


def test_criterion_8_gradients(capsys):
    f, box = parse_file(SQUARE_MINUS_TRIANGLE)
    X = normalize(SosPolynomial([(1.0, Polynomial.constant(1.0, 2))]), f, box).sample(200, random_state=0)
    E = monomials_up_to(2, 2)
    rng = np.random.default_rng(8)
    fams = {
        "sos": _family(SosPolynomial.from_matrix(E, rng.standard_normal((2, len(E))), [1.0, 0.5]), f, box),
        "spline": _family(SplineDensitySpec.constant(box, 3, n_components=2, seed=0, jitter=0.3), f, box),
    }
    configs = {"plain": FitConfig(), "penalty": FitConfig(penalty_threshold=-5.0), "reparam": FitConfig(reparametrize=True)}
    worst, cases = 0.0, []
    for name, fam in fams.items():
        for cname, cfg in configs.items():
            if cname == "reparam" and name == "spline":
                continue
            obj = _objective(fam, X, cfg)
            theta0 = _initial_theta(obj, fam)
            for _ in range(20):
                theta = theta0 + 0.3 * rng.standard_normal(theta0.size)
                if cname == "penalty":
                    assert obj(theta, grad=False)[2]["penalty"]
                worst = max(worst, fd_rel_error(obj, theta))
            cases.append(f"{name}/{cname}")
    verdict(capsys, 8, worst <= 1e-4, f"worst rel err {worst:.1e} over 20 points each of {', '.join(cases)}")


def test_criterion_9_decomposition_soundness(capsys):
    square = Box([-1, -1], [1, 1])
    bench = {"square-minus-triangle": parse_file(SQUARE_MINUS_TRIANGLE), "strips": (strips(3), square)}
    for N in range(3, 20, 2):
        bench[f"star{N}"] = nstar_formula(NStarSpec(N))
    rng = np.random.default_rng(9)
    bad = 0
    for f, box in bench.values():
        Y = rng.uniform(box.lo, box.hi, (10**5, box.dim))
        off = ~near_boundary(f, Y)
        bad += int(np.sum(decompose(f, box).contains(Y)[off] != holds(f, Y)[off]))
    over = []
    for k in range(1, 20):
        f = Or([Atom(tuple(rng.standard_normal(2)), "<=", float(rng.uniform(-1, 0.5))) for _ in range(k)])
        if len(decompose(f, square).regions) > k:
            over.append(k)
    for N in range(3, 20, 2):
        spec = NStarSpec(N)
        f = Or([Atom(tuple(a), ">", b) for a, b in spec.chords()])
        if len(decompose(f, spec.box).regions) > N:
            over.append(f"chords{N}")
    verdict(capsys, 9, bad == 0 and not over,
            f"{bad} off-boundary disagreements on {len(bench)} formulas; disjunctions over bound: {over or 'none'}")


def test_criterion_10_spline_construction(capsys):
    rng = np.random.default_rng(10)
    worst_v = worst_d = 0.0
    for _ in range(100):
        k = np.cumsum(rng.uniform(0.1, 2.0, int(rng.integers(2, 8))))
        s = HermiteSpline1D(k, rng.standard_normal(k.size), rng.standard_normal(k.size))
        for i in range(s.n_bins):
            c = s.bin_coefficients(i)
            h = k[i + 1] - k[i]
            for t, j in ((0.0, i), (h, i + 1)):
                v = c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3
                dv = c[1] + 2 * c[2] * t + 3 * c[3] * t**2
                worst_v = max(worst_v, abs(v - s.values[j]))
                worst_d = max(worst_d, abs(dv - s.derivs[j]))
    worked = np.allclose(hermite_bin_coefficients(0.0, 0.0, 1.0, 0.0, 1.0), [0, 0, 3, -2], rtol=0, atol=1e-15)
    verdict(capsys, 10, worst_v <= 1e-10 and worst_d <= 1e-8 and worked,
            f"max value err {worst_v:.1e}, max derivative err {worst_d:.1e} on 100 splines; "
            f"(0,0)->(1,0) bin {'gives' if worked else 'misses'} (0,0,3,-2)")
