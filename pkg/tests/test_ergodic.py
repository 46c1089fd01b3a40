import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import collared, family
from tilelab.bratteli import Hierarchy, Law
from tilelab.ergodic import (CoverageError, FrequencyError, Observable, boundary_measure_decay,
                             boundary_measure_exact, deviation_series, envelope_fit, ergodic_integral,
                             ergodic_integral_bruteforce, packing_bound_ratios, packing_constants,
                             packing_decomposition, patch_frequencies, predicted_exponent, root_tree, t_grid,
                             volume_observable)
from tilelab.geometry import Region
from tilelab.systems import load_family

PHI = (1 + 5 ** 0.5) / 2


def interval(lo, hi):
    return Region("interval", [(lo + hi) / 2], half_widths=[(hi - lo) / 2])


# ---------------------------------------------------------------- packing

def test_exact_supertile_region(four):
    tree = root_tree(four, [0] * 5)
    p = packing_decomposition(tree, interval(0, 64))
    assert p.kappa[3].sum() == 1
    assert p.kappa.sum() == 1
    assert p.covered_volume == pytest.approx(64)


def test_region_of_length_72(four):
    tree = root_tree(four, [0] * 5)
    region = interval(0, 72)
    p = packing_decomposition(tree, region)
    assert p.level_counts() == {1: [2, 0], 3: [1, 0]}
    assert p.covered_volume == pytest.approx(72)
    types, trans, _ = tree.leaves()
    lo = trans[:, 0] - 0.5
    assert np.sum((lo >= -1e-9) & (lo + 1 <= 72 + 1e-9)) == 72


def test_region_too_large(four):
    tree = root_tree(four, [0] * 2)
    with pytest.raises(CoverageError):
        packing_decomposition(tree, interval(0, 100))


def test_zero_observable(four):
    tree = root_tree(four, [0] * 6)
    assert ergodic_integral(Observable(np.array([0, 0])), tree, interval(0.3, 1000.7)) == 0


def test_volume_observable_counts_tiles(four):
    tree = root_tree(four, [0] * 6)
    region = interval(0.2, 777.9)
    types, trans, _ = tree.leaves()
    count = int(region.contains_points(trans).sum())
    assert ergodic_integral(volume_observable(four), tree, region) == count


def test_eigenvector_recursion(four):
    tree = root_tree(four, [0] * 10)
    obs = Observable(np.array([1, -1]))
    for k in range(11):
        assert ergodic_integral(obs, tree, interval(0, 4 ** k)) == 2 ** k


def test_collared_observable_needs_root_class(four):
    cset = collared("four1d", [0])
    tree = root_tree(four, [0] * 4)
    with pytest.raises(ValueError):
        packing_decomposition(tree, interval(0, 10), Observable(cset.lift(np.array([1, -1])), cset))
    tree = root_tree(four, [0] * 4, cset)
    obs = Observable(cset.lift(np.array([1, -1])), cset)
    assert ergodic_integral(obs, tree, interval(0, 64)) == 8


placements = st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.4))


@settings(max_examples=20, deadline=None)
@given(p=placements)
def test_hierarchical_equals_brute_force_1d(p):
    fam = family("fib1d")
    tree = root_tree(fam, [0] * 14)
    lo, hi = tree.support.bbox
    span = float(hi[0] - lo[0])
    c = lo[0] + span * (0.3 + 0.4 * p[0])
    region = Region("interval", [c], half_widths=[span * p[2] * 0.5])
    obs = Observable(np.array([3, -5]))
    assert ergodic_integral(obs, tree, region) == ergodic_integral_bruteforce(obs, tree, region)


@settings(max_examples=15, deadline=None)
@given(p=placements, disk=st.booleans())
def test_hierarchical_equals_brute_force_2d(p, disk):
    fam = family("prod2d")
    tree = root_tree(fam, [0, 1, 0, 1])
    span = 256.0
    c = np.array([span * (0.3 + 0.4 * p[0]), span * (0.3 + 0.4 * p[1])])
    if disk:
        region = Region("disk", c, radius=span * p[2] * 0.5)
    else:
        region = Region("box", c, half_widths=[span * p[2] * 0.5, span * p[2] * 0.3])
    obs = Observable(np.array([1, 2, -4, 1]))
    assert ergodic_integral(obs, tree, region) == ergodic_integral_bruteforce(obs, tree, region)


def test_packing_bounds_over_grid(four):
    base = Region.unit_box(1)
    k1, k2 = packing_constants(four, base)
    tree = root_tree(four, [0] * 12)
    for t in t_grid(four, 2.0, 4 ** 10):
        region = base.scaled(t)
        p = packing_decomposition(tree, region)
        r1, r2 = packing_bound_ratios(tree, p, region)
        assert r1 <= k1 and r2 <= k2


def test_packing_bounds_disk(prod):
    base = Region("disk", [0.5, 0.5], radius=0.5)
    k1, k2 = packing_constants(prod, base)
    tree = root_tree(prod, [0] * 6)
    # the bound needs one tile diameter to fit inside T.B
    for t in t_grid(prod, 4.0, 4 ** 5):
        region = base.scaled(t)
        r1, r2 = packing_bound_ratios(tree, packing_decomposition(tree, region), region)
        assert r1 <= k1 and r2 <= k2


# ---------------------------------------------------------------- deviation series

def test_grid_ratio(four):
    g = t_grid(four, 4.0, 4 ** 10)
    assert g[0] == 4 and g[-1] == pytest.approx(4 ** 10)
    assert np.allclose(g[1:] / g[:-1], 2.0)
    assert len(g) >= 8


def test_envelope_needs_points():
    with pytest.raises(ValueError):
        envelope_fit([1.0, 2.0, 3.0], [1, 2, 3])


def test_envelope_of_power_law():
    t = 2.0 ** np.arange(1, 30)
    slope, _ = envelope_fit(t, t ** 0.7)
    assert slope == pytest.approx(0.7, abs=1e-9)


def test_volume_growth_rate(four, prod):
    for fam, tmax in ((four, 4 ** 8), (prod, 4 ** 4)):
        rep = deviation_series(volume_observable(fam), fam, Law.parse("fixed:1"), Region.unit_box(fam.dim), tmax)
        assert rep.slope == pytest.approx(fam.dim, abs=0.05)


def test_four_mean_removed_slope(four):
    rep = deviation_series(Observable(np.array([1, -1])), four, Law.parse("fixed:1"), Region.unit_box(1), 4 ** 10,
                           t0=4.0)
    assert rep.predicted == pytest.approx(0.5, abs=1e-6)
    assert rep.slope == pytest.approx(0.5, abs=0.05)
    assert rep.slope <= rep.predicted + 0.1
    assert rep.passed
    header = rep.to_csv().splitlines()[0]
    assert header == "T,I,logT,logAbsI,level_counts_json"


def test_generic_mode_runs(fib):
    freq = np.array([1 / PHI, 1 / PHI ** 2])
    obs = Observable(np.array([1.0, -PHI]))
    assert obs.mean_removed(freq)
    rep = deviation_series(obs, fib, Law.parse("fixed:1"), Region.unit_box(1), 200.0, seed=3, mode="generic")
    assert rep.meta["mode"] == "generic"
    assert rep.slope <= rep.predicted + 0.1


def test_predicted_boundary_claim(four):
    nu, claim, comp, _ = predicted_exponent(four, np.zeros(80, dtype=np.int64), Observable(np.array([0, 0])))
    assert claim == "boundary" and comp is None and nu == 0.0


def test_centered_observable(four):
    obs = Observable(np.array([1, 0])).centered(np.array([0.5, 0.5]))
    assert obs.mean_removed(np.array([0.5, 0.5]))


# ---------------------------------------------------------------- boundary measure

def test_doubling_boundary_decay(doubling):
    dec = boundary_measure_decay(doubling, Law.parse("fixed:1"), 12, samples=40_000, seed=1)
    assert dec.rate == pytest.approx(0.5, abs=0.05)
    exact = boundary_measure_exact(doubling, [0] * 20, 12)
    assert np.allclose(exact, 2.0 * 0.5 ** np.arange(1, 13))


def test_four_boundary_matches_exact(four):
    exact = boundary_measure_exact(four, [0] * 20, 12)
    assert np.allclose(exact, 2.0 * 0.25 ** np.arange(1, 13))
    dec = boundary_measure_decay(four, Law.parse("fixed:1"), 6, samples=50_000, seed=2)
    assert np.all(np.abs(dec.mu_hat - exact[:6]) <= 4 * dec.stderr + 1e-12)
    assert dec.rate < 0.75


def test_boundary_decay_thread_independent(four):
    law = Law.bernoulli([0.5, 0.5])
    a = boundary_measure_decay(four, law, 8, samples=10_000, seed=4, threads=1)
    b = boundary_measure_decay(four, law, 8, samples=10_000, seed=4, threads=3)
    assert np.array_equal(a.mu_hat, b.mu_hat)


# ---------------------------------------------------------------- frequencies

def test_fib_frequencies(fib):
    fr = patch_frequencies(fib, Law.parse("fixed:1"), [5, 10, 20], seed=0)
    assert fr.top == pytest.approx([1 / PHI, 1 / PHI ** 2], abs=1e-3)
    assert fr.discrepancy < 1e-3


def test_four_frequencies(four):
    fr = patch_frequencies(four, Law.parse("fixed:1"), [20], seed=0)
    assert fr.top == pytest.approx([0.5, 0.5], abs=1e-3)


def test_bernoulli_paths_agree(four):
    fr = patch_frequencies(four, Law.bernoulli([0.5, 0.5]), [20], seed=9, paths=3)
    assert fr.discrepancy < 1e-3


def test_collared_frequencies_sum_to_type_frequencies(fib):
    cset = collared("fib1d")
    fr = patch_frequencies(fib, Law.parse("fixed:1"), [20], collared=cset)
    by_type = np.bincount(cset.center_types, weights=fr.top, minlength=2)
    assert by_type == pytest.approx([1 / PHI, 1 / PHI ** 2], abs=1e-3)


def test_reducible_family_flagged():
    doc = """
name = "split"
[[prototile]]
id = "a"
dim = 1
interval = [-0.5, 0.5]
[[prototile]]
id = "b"
dim = 1
interval = [-0.5, 0.5]
[[rule]]
id = "r"
theta = 0.5
[[rule.branch]]
source = "a"
target = "a"
offset = [-0.25]
[[rule.branch]]
source = "a"
target = "a"
offset = [0.25]
[[rule.branch]]
source = "b"
target = "b"
offset = [-0.25]
[[rule.branch]]
source = "b"
target = "b"
offset = [0.25]
"""
    fam = load_family(doc)
    with pytest.raises(FrequencyError):
        patch_frequencies(fam, Law.parse("fixed:1"), [10], cap=30)


def test_count_matrix_columns_are_frequencies(fib):
    h = Hierarchy(fib, [0] * 20)
    col = h.count_matrix(20)[:, 0].astype(float)
    assert col / col.sum() == pytest.approx([1 / PHI, 1 / PHI ** 2], abs=1e-6)
    assert math.isclose(col.sum(), 17711, rel_tol=0)
