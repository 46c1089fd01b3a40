"""Acceptance criteria 1-11, each at its stated tolerance.

Every criterion prints one ``PASS``/``FAIL`` line (collected into the pytest
terminal summary, or printed directly with ``python3 tests/test_acceptance.py``).
"""
import math
import os
import subprocess
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import matrix_counts, same_tiles  # noqa: E402
from tilelab.bratteli import Hierarchy, Law  # noqa: E402
from tilelab.cocycle import (PeriodicWarning, cocycle_apply, collar_supertile, collared_tiles,  # noqa: E402
                             lambda1_consistency, lyapunov_spectrum, supertile_integrals)
from tilelab.ergodic import (Observable, boundary_measure_decay, boundary_measure_exact, deviation_series,  # noqa: E402
                             ergodic_integral, ergodic_integral_bruteforce, packing_bound_ratios,
                             packing_constants, packing_decomposition, patch_frequencies, root_tree, t_grid)
from tilelab.fixtures import load, path, text  # noqa: E402
from tilelab.geometry import SNAP, Region  # noqa: E402
from tilelab.systems import load_family, validate_type_h  # noqa: E402

PHI = (1 + 5 ** 0.5) / 2
FIXTURES = ("fib1d", "four1d", "doubling", "square2d", "prod2d")
RESULTS = {}


def record(num, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {num:>2}  {title}: {detail}"
    RESULTS[num] = line
    print(line)
    return ok


def fam(name, _cache={}):
    if name not in _cache:
        _cache[name] = load(name)
    return _cache[name]


def quiet_collared(family, rules=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeriodicWarning)
        return collared_tiles(family, rules=rules)


# ---------------------------------------------------------------- 1

def criterion_1():
    t = time.perf_counter()
    good = all(validate_type_h(load_family(text(n), validate=False)).ok
               for n in ("fib1d", "four1d", "doubling", "prod2d"))
    expected = {"broken_nonuniform": "uniform_scaling", "broken_origin": "shared_attractor",
                "broken_overlap": "compatibility"}
    named = all([c.name for c in validate_type_h(load_family(text(n), validate=False)).checks if not c.passed] == [chk]
                for n, chk in expected.items())
    dt = time.perf_counter() - t
    return record(1, "validation suite", good and named and dt < 1.0,
                  f"valid={good} broken-named={named} runtime={dt:.2f}s (<1s)")


# ---------------------------------------------------------------- 2

def criterion_2():
    t = time.perf_counter()
    rng = np.random.default_rng(2)
    bad = []
    for name in FIXTURES:
        f = fam(name)
        word = rng.integers(f.N, size=6)
        h = Hierarchy(f, word)
        for k in range(7):
            prod = matrix_counts(f, word[:k])
            for v in range(f.M):
                types, _, _ = h.tree(k, v).leaves()
                if np.bincount(types, minlength=f.M).tolist() != [int(c) for c in prod[:, v]]:
                    bad.append((name, k, v))
    dt = time.perf_counter() - t
    return record(2, "counting oracle", not bad and dt < 10.0,
                  f"mismatches={len(bad)} over 5 fixtures, k<=6, runtime={dt:.2f}s (<10s)")


# ---------------------------------------------------------------- 3

def criterion_3():
    rng = np.random.default_rng(3)
    fails = 0
    total = 0
    for name in FIXTURES:
        f = fam(name)
        for _ in range(20):
            k = int(rng.integers(2, 5 if f.dim == 1 else 4))
            word = rng.integers(f.N, size=k)
            patch = Hierarchy(f, word).tree(k, int(rng.integers(f.M))).patch(levels=1)
            t = rng.uniform(-50, 50, size=f.dim)
            left = patch.translate(t).renormalize()
            right = patch.renormalize().translate(f.thetas[word[0]] * t)
            total += 1
            fails += not same_tiles((left.types, left.translations), (right.types, right.translations), atol=SNAP)
    return record(3, "conjugacy", fails == 0, f"{total - fails}/{total} (patch, t) pairs agree at 1e-6")


# ---------------------------------------------------------------- 4

def criterion_4():
    t = time.perf_counter()
    fixed = {"four1d": [math.log(4), math.log(2)], "fib1d": [math.log(PHI), -math.log(PHI)],
             "prod2d": [math.log(16), math.log(8), math.log(8), math.log(4)]}
    errs = {}
    for name, want in fixed.items():
        rep = lyapunov_spectrum(fam(name), Law.parse("fixed:1"), 200)
        errs[name] = float(np.max(np.abs(rep.exponents - want)))
    rep = lyapunov_spectrum(fam("four1d"), Law.bernoulli([0.5, 0.5]), 200, samples=200, seed=4)
    dev = np.abs(rep.exponents - [math.log(4), math.log(2)])
    # commuting matrices make every sample exact, so the standard error is float noise
    tol = np.maximum(3 * rep.stderr, 1e-12)
    dt = time.perf_counter() - t
    ok = all(e < 1e-6 for e in errs.values()) and bool(np.all(dev <= tol)) and dt < 30
    detail = ", ".join(f"{k} err={v:.1e}" for k, v in errs.items())
    return record(4, "Lyapunov exactness", ok,
                  f"{detail}; bernoulli dev={dev.max():.1e} vs 3SE={3 * rep.stderr.max():.1e}; runtime={dt:.1f}s (<30s)")


# ---------------------------------------------------------------- 5

def criterion_5():
    worst = 0.0
    runs = 0
    for name in FIXTURES:
        f = fam(name)
        laws = [Law.parse("fixed:1")] + ([Law.bernoulli([1 / f.N] * f.N)] if f.N > 1 else [])
        for law in laws:
            rep = lambda1_consistency(f, law, 200, samples=4, seed=5)
            worst = max(worst, rep["difference"])
            runs += 1
    return record(5, "lambda_1 consistency", worst < 1e-6, f"max |lambda1 - d*mean(-log theta)| = {worst:.1e} over {runs} runs")


# ---------------------------------------------------------------- 6

def criterion_6():
    rng = np.random.default_rng(6)
    checks = bad = 0
    for name in FIXTURES:
        f = fam(name)
        word = rng.integers(f.N, size=6)
        h = Hierarchy(f, word)
        for n in range(7):
            beta = rng.integers(-9, 10, size=f.M)
            checks += 1
            bad += not np.array_equal(cocycle_apply(beta, word[:n], f), supertile_integrals(h, n, beta))
        # collared weights: geometric collaring of whole supertiles (2-D capped at level 3 for memory)
        cset = quiet_collared(f)
        hc = Hierarchy(f, word, cset)
        for n in range(1, 7 if f.dim == 1 else 4):
            beta = rng.integers(-9, 10, size=cset.size)
            geo = np.array([collar_supertile(cset, hc, n, c) @ beta for c in range(cset.size)])
            checks += 1
            bad += not np.array_equal(cocycle_apply(beta, word[:n], f, cset), geo)
    return record(6, "cocycle/geometry identity", bad == 0, f"{checks - bad}/{checks} exact integer matches")


# ---------------------------------------------------------------- 7

def _coboundary_beta(cset, axis_type, other_type=None):
    """Weights +1 on x-edges a|b seen from a, -1 seen from b, times a sign in y for products."""
    beta = np.zeros(cset.size, dtype=np.int64)
    dim = cset.family.dim
    for i, (ct, ring) in enumerate(cset.keys):
        right = [n for n, o in ring if round(o[0] * SNAP) == 1 and all(round(v * SNAP) == 0 for v in o[1:])]
        left = [n for n, o in ring if round(o[0] * SNAP) == -1 and all(round(v * SNAP) == 0 for v in o[1:])]
        cx = axis_type(ct)
        v = int(cx == 0 and axis_type(right[0]) == 1) - int(cx == 1 and axis_type(left[0]) == 0)
        if dim == 2:
            v *= 1 if other_type(ct) == 0 else -1
        beta[i] = v
    return beta


def criterion_7():
    t = time.perf_counter()
    four, prod = fam("four1d"), fam("prod2d")
    r1 = deviation_series(Observable(np.array([1, -1])), four, Law.parse("fixed:1"), Region.unit_box(1),
                          4 ** 10, t0=4.0, tolerance=0.05)
    r2 = deviation_series(Observable(np.array([1, 1, -1, -1])), prod, Law.parse("fixed:1"), Region.unit_box(2),
                          4 ** 6, t0=4.0, tolerance=0.10)
    c2 = quiet_collared(prod, [0])
    b3 = _coboundary_beta(c2, lambda t: t // 2, lambda t: t % 2)
    r3 = deviation_series(Observable(b3, c2), prod, Law.parse("fixed:1"), Region("disk", [0.0, 0.0], radius=1.0),
                          4 ** 6, t0=4.0, mode="generic", seed=5, tolerance=0.10)
    c1 = quiet_collared(four, [0])
    b4 = _coboundary_beta(c1, lambda t: t)
    r4 = deviation_series(Observable(b4, c1), four, Law.parse("fixed:1"), Region("box", [0.0], half_widths=[1.0]),
                          4 ** 10, t0=4.0, mode="generic", seed=5, tolerance=0.10)
    dt = time.perf_counter() - t
    ok1 = abs(r1.slope - 0.5) <= 0.05
    ok2 = abs(r2.slope - 1.5) <= 0.10
    ok3 = r3.claim == "boundary" and r3.slope <= 1 + 0.10
    ok4 = r4.claim == "boundary" and r4.slope <= 0 + 0.10
    return record(7, "deviation exponents", ok1 and ok2 and ok3 and ok4 and dt < 300,
                  f"FOUR1D slope={r1.slope:.3f} (0.50+-0.05), PROD2D slope={r2.slope:.3f} (1.50+-0.10), "
                  f"no-E+ 2-D slope={r3.slope:.3f} (<=1.10), no-E+ 1-D slope={r4.slope:.3f} (<=0.10), "
                  f"runtime={dt:.0f}s (<300s)"), (r1, r2, r3, r4)


# ---------------------------------------------------------------- 8

def criterion_8():
    rng = np.random.default_rng(8)
    setups = {"fib1d": (Region.unit_box(1), 4.0, 4 ** 10), "four1d": (Region.unit_box(1), 4.0, 4 ** 10),
              "doubling": (Region.unit_box(1), 4.0, 4 ** 10),
              "square2d": (Region("box", [0.25, 0.25], half_widths=[0.25, 0.25]), 8.0, 4 ** 6),
              "prod2d": (Region("box", [0.25, 0.25], half_widths=[0.25, 0.25]), 8.0, 4 ** 6)}
    worst1 = worst2 = 0.0
    bound_ok = True
    brute_bad = brute_n = 0
    for name, (base, t0, tmax) in setups.items():
        f = fam(name)
        k1, k2 = packing_constants(f, base)
        word = np.zeros(80, dtype=np.int64)
        depth = next(k for k in range(1, 80) if root_tree(f, word[:k]).support.contains_points(
            np.array(base.scaled(tmax).bbox)).all())
        tree = root_tree(f, word[:depth])
        for t in t_grid(f, t0, tmax):
            region = base.scaled(t)
            r1, r2 = packing_bound_ratios(tree, packing_decomposition(tree, region), region)
            worst1, worst2 = max(worst1, r1 / k1), max(worst2, r2 / k2)
            bound_ok &= r1 <= k1 and r2 <= k2
        # brute force at random placements, T <= 4^5
        tb = 4 ** 5
        bdepth = next(k for k in range(1, 80) if root_tree(f, word[:k]).support.volume >= (2 * tb) ** f.dim * base.volume
                      and np.all(np.ptp(root_tree(f, word[:k]).support.bbox, axis=0) >= 2 * tb * np.ptp(base.bbox, axis=0)))
        btree = root_tree(f, word[:bdepth])
        lo, hi = btree.support.bbox
        obs = Observable(rng.integers(-3, 4, size=f.M))
        grid = [t for t in t_grid(f, 1.0, tb)]
        for _ in range(20):
            t = grid[int(rng.integers(len(grid)))]
            region = base.scaled(t)
            rlo, rhi = region.bbox
            shift = lo - rlo + rng.uniform(0, 1, size=f.dim) * ((hi - lo) - (rhi - rlo))
            region = region.translated(shift)
            brute_n += 1
            brute_bad += ergodic_integral(obs, btree, region) != ergodic_integral_bruteforce(obs, btree, region)
    ok = bound_ok and brute_bad == 0
    return record(8, "packing bounds", ok,
                  f"max Vol-ratio/K1={worst1:.3f}, max kappa-ratio/K2={worst2:.3f} (<=1); "
                  f"hierarchical=brute force {brute_n - brute_bad}/{brute_n}")


# ---------------------------------------------------------------- 9

def criterion_9():
    parts = []
    ok = True
    runs = [("four1d", "fixed:1"), ("four1d", "bernoulli:0.5,0.5"), ("doubling", "fixed:1")]
    for name, law in runs:
        dec = boundary_measure_decay(fam(name), Law.parse(law), 20, samples=100_000, seed=9)
        exact = boundary_measure_exact(fam(name), Law.parse(law).sample(28, 9), 20)
        rel_exact = float(exact[-1] / exact.sum())
        good = dec.rate < 0.75 and dec.rel_increment < 1e-3 and rel_exact < 1e-3
        ok &= good
        parts.append(f"{name}/{law.split(':')[0]} rate={dec.rate:.3f} rel-incr={dec.rel_increment:.1e} "
                     f"(exact {rel_exact:.1e})")
    return record(9, "boundary-measure decay", ok, "; ".join(parts))


# ---------------------------------------------------------------- 10

def criterion_10():
    fr = patch_frequencies(fam("fib1d"), Law.parse("fixed:1"), [5, 10, 20], seed=10, paths=2)
    err = float(np.max(np.abs(fr.top - [1 / PHI, 1 / PHI ** 2])))
    ok = err <= 1e-3 and fr.discrepancy < 1e-3
    return record(10, "frequencies", ok, f"|freq - (1/phi, 1/phi^2)|={err:.1e}, discrepancy={fr.discrepancy:.1e} (<1e-3)")


# ---------------------------------------------------------------- 11

def _cli_run(workdir, threads):
    env = dict(os.environ, TILELAB_THREADS=str(threads), SOURCE_DATE_EPOCH="1700000000")
    four, prod, fib = (str(path(n)) for n in ("four1d", "prod2d", "fib1d"))
    cmds = [
        ["validate", four, "--out", "validate.json"],
        ["expand", prod, "--law", "bernoulli:0.5,0.5", "--seed", "3", "--depth", "2", "--policy", "random",
         "--collared", "--out", "patch.jsonl"],
        ["render", "patch.jsonl", "--out", "patch.svg"],
        ["expand", four, "--word", "111", "--depth", "3", "--out", "strip.jsonl"],
        ["render", "strip.jsonl", "--out", "strip.svg"],
        ["lyapunov", four, "--law", "bernoulli:0.5,0.5", "--n", "120", "--samples", "16", "--seed", "7",
         "--out", "lyap.json"],
        ["deviate", prod, "--law", "fixed:1", "--beta", "1,1,-1,-1", "--region", "disk:0,0:1", "--tmax", "256",
         "--mode", "generic", "--seed", "2", "--out", "dev.json"],
        ["freqs", fib, "--law", "fixed:1", "--depths", "5,20", "--out", "freqs.json"],
        ["boundary", four, "--law", "bernoulli:0.5,0.5", "--kmax", "10", "--samples", "20000", "--seed", "1",
         "--out", "boundary.json"],
    ]
    for c in cmds:
        subprocess.run([sys.executable, "-m", "tilelab.cli", *c], cwd=workdir, env=env, check=True,
                       capture_output=True)
    return {p.name: p.read_bytes() for p in sorted(Path(workdir).iterdir())}


def criterion_11():
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b, tempfile.TemporaryDirectory() as c:
        one = _cli_run(a, 1)
        many = _cli_run(b, 4)
        again = _cli_run(c, 4)
    same = one.keys() == many.keys() == again.keys() and all(one[k] == many[k] == again[k] for k in one)
    diff = [k for k in one if one.get(k) != many.get(k) or one.get(k) != again.get(k)]
    return record(11, "determinism", same, f"{len(one)} output files byte-identical under 1 and 4 threads"
                  + (f"; differing: {diff}" if diff else ""))


# ---------------------------------------------------------------- pytest entry points

def test_criterion_1_validation():
    assert criterion_1()


def test_criterion_2_counting():
    assert criterion_2()


def test_criterion_3_conjugacy():
    assert criterion_3()


def test_criterion_4_lyapunov():
    assert criterion_4()


def test_criterion_5_lambda1():
    assert criterion_5()


def test_criterion_6_cocycle_geometry():
    assert criterion_6()


def test_criterion_7_deviation():
    ok, _ = criterion_7()
    assert ok


def test_criterion_8_packing():
    assert criterion_8()


def test_criterion_9_boundary_decay():
    assert criterion_9()


def test_criterion_10_frequencies():
    assert criterion_10()


@pytest.mark.slow
def test_criterion_11_determinism():
    assert criterion_11()


if __name__ == "__main__":
    fns = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
           criterion_8, criterion_9, criterion_10, criterion_11]
    results = [fn() for fn in fns]
    ok = all(r[0] if isinstance(r, tuple) else r for r in results)
    sys.exit(0 if ok else 1)
