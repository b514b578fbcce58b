import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lp_ends import cz_cover as cz
from lp_ends.errors import DomainError, InvalidIndex, NoParent, OutOfDomain
from lp_ends.warp_geometry import make_warp

FLAT = make_warp("flat", r_range=(0.0, 10.0))
HYP = make_warp("hyperbolic", r_range=(0.0, 12.0))
CON = make_warp("conical", r_range=(1.0, 12.0))


def test_flat_cells():
    c = cz.cell(0, 3, (2,), FLAT, 0)
    assert (c.r_lo, c.r_hi, float(c.theta_lo[0]), c.width) == (3.0, 4.0, 2.0, 1.0)
    c = cz.cell(2, 9, (0,), FLAT, 0)
    assert (c.r_lo, c.r_hi, float(c.theta_lo[0]), c.width) == (2.25, 2.5, 0.0, 0.25)


def test_hyperbolic_cell_uses_integer_base():
    c = cz.cell(1, 5, (0,), HYP, 0)
    assert (c.r_lo, c.r_hi) == (2.5, 3.0)
    assert c.width == pytest.approx(np.exp(-2.0) / 2, rel=1e-15)


def test_cell_index_below_domain():
    with pytest.raises(InvalidIndex):
        cz.cell(1, 1, (0,), FLAT, 1)


def test_cell_measures():
    assert cz.cell_measure(cz.cell(-2, 1, (0,), FLAT, 0), 2) == pytest.approx(4.0, rel=1e-14)
    assert cz.cell_measure(cz.cell(3, 9, (0,), FLAT, 0), 2) == pytest.approx(2.0**-6, rel=1e-14)
    assert cz.cell_measure(cz.cell(0, 5, (0,), HYP, 0), 2) == pytest.approx(np.e - 1, rel=1e-6)


def test_parent_examples():
    p = cz.parent(cz.cell(1, 5, (0,), FLAT, 0))
    assert (p.k, p.i) == (0, 2)
    p = cz.parent(cz.cell(0, 3, (5,), FLAT, 0))
    assert (p.k, p.i, p.m) == (-1, 3, (2,))
    with pytest.raises(NoParent):
        cz.parent(cz.cell(-3, 3, (0,), FLAT, 0), n0=3)


@pytest.mark.parametrize("w,R", [(FLAT, 0), (HYP, 1), (CON, 1)])
def test_parent_contains_child(w, R):
    rng = np.random.default_rng(3)
    for _ in range(10**4):
        k = int(rng.integers(-3, 7))
        i = int(rng.integers((1 << max(k, 0)) * R, (1 << max(k, 0)) * (R + 8)))
        m = (int(rng.integers(-50, 50)),)
        c = cz.cell(k, i, m, w, R)
        assert cz.parent(c).contains_cell(c)


def test_exhaustive_parent_search():
    # oracle: scan candidate level-0 cells for the one containing (2.5, 3]
    child = cz.cell(1, 5, (0,), HYP, 0)
    found = [i for i in range(0, 10) if cz.cell(0, i, (0,), HYP, 0).contains_cell(child)]
    assert found == [cz.parent(child).i] == [2]


def test_locate_examples():
    fam = cz.make_family(FLAT, 0, 2, R_max=10.0)
    c = fam.locate((3.5, 2.2), 0)
    assert (c.i, c.m) == (3, (2,))
    assert fam.locate((4.0, 0.1), 0).i == 3
    with pytest.raises(OutOfDomain):
        fam.locate((0.0, 0.1), 0)


@settings(max_examples=200, deadline=None)
@given(k=st.integers(-3, 6), r=st.floats(1.001, 8.999), th=st.floats(-20, 20), kind=st.sampled_from(["flat", "hyp", "con"]))
def test_tiling_and_round_trip(k, r, th, kind):
    w = {"flat": FLAT, "hyp": HYP, "con": CON}[kind]
    fam = cz.make_family(w, 1, 2, R_max=9.0, n0=3, k_max=6)
    c = fam.locate((r, th), k)
    assert c.contains(r, th)
    # neighbours in r and theta do not contain the point
    for di, dm in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        if c.i + di >= (1 << max(k, 0)):
            other = fam.cell(k, c.i + di, (c.m[0] + dm,))
            assert not other.contains(r, th)
    mid = (0.5 * (c.r_lo + c.r_hi), float(c.theta_lo[0]) + 0.5 * c.width)
    again = fam.locate(mid, k)
    assert (again.k, again.i, again.m) == (c.k, c.i, c.m)


def test_point_on_angular_edge_lies_in_one_cell():
    # 1.5 / 0.1 rounds above 15 while 15 * 0.1 rounds above 1.5
    fam = cz.make_family(CON, 1, 2, R_max=9.0, n0=3, k_max=6)
    c = fam.locate((6.0, 1.5), 1)
    hits = [fam.cell(1, c.i, (c.m[0] + d,)).contains(6.0, 1.5) for d in (-1, 0, 1)]
    assert hits == [False, True, False]


def test_iterated_parents_reach_coarsest_level():
    c = cz.cell(4, 77, (13,), HYP, 1)
    n0 = 3
    while c.k > -n0:
        c = cz.parent(c, n0)
    assert c.k == -n0


def test_measure_comparability_is_grid_stable():
    a = cz.make_family(HYP, 1, 2, R_max=9.0, n0=2, k_max=4).C3
    b = cz.make_family(HYP, 1, 2, R_max=9.0, n0=2, k_max=6).C3
    assert np.isfinite(a) and abs(b / a - 1) <= 0.1


def test_conditional_expectation_examples():
    fam = cz.make_family(HYP, 1, 2, R_max=9.0, n0=2, k_max=4)
    # a constant on whole level-0 cells is reproduced
    ii, mm = np.meshgrid(np.arange(8, 12), np.arange(0, 8), indexing="ij")
    u = cz.CellFunction.from_cells(fam, 2, ii.ravel(), mm.ravel(), np.full(ii.size, 3.0))
    E = cz.conditional_expectation(u, 0)
    assert np.allclose(E.values, 3.0, rtol=1e-13)
    rng = np.random.default_rng(0)
    v = cz.random_cell_function(fam, rng, 3)
    for k in range(-2, 4):
        assert cz.conditional_expectation(v, k).l1() <= v.l1() * (1 + 1e-12)
    with pytest.raises(DomainError):
        cz.conditional_expectation(v, 4)


def test_expectation_error_halves_for_smooth_bump():
    fam = cz.make_family(FLAT, 0, 2, R_max=8.0, n0=0, k_max=6)
    f = lambda r, th: np.exp(-((r - 4.0) ** 2 + (th - 1.0) ** 2))
    u = cz.CellFunction.from_callable(f, fam, 6, (1.0, 7.0), (-2.0, 4.0))
    errs = [cz.expectation_error(u, k) for k in range(1, 6)]
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    assert np.all(ratios >= 0.5 / 1.5) and np.all(ratios <= 0.5 * 1.5)


def test_no_selection_for_small_function():
    fam = cz.make_family(FLAT, 0, 2, R_max=8.0, n0=4, k_max=3)
    u = cz.CellFunction.from_cells(fam, 2, [9], [[0]], [0.5])
    dec = cz.cz_decompose(u, 1.0)
    assert dec.count == 0
    assert np.array_equal(dec.good_values(), u.values)
    assert cz.verify_cz(dec).passed


def test_flat_indicator_example():
    fam = cz.make_family(FLAT, 0, 2, R_max=4.0, n0=4, k_max=3)
    u = cz.CellFunction.from_cells(fam, 0, [1], [[0]], [4.0])
    dec = cz.cz_decompose(u, 1.0)
    assert dec.count >= 1
    assert dec.table()[0] == {"k": -2, "i": 1, "m": (0,), "nu": pytest.approx(4.0), "t": 5.0, "nu_star": pytest.approx(240.0)}
    # brute-force reconstruction: good part plus pieces on the fine cells
    good = dec.good_values()
    pieces = np.zeros_like(good)
    bad = dec.owner >= 0
    pieces[bad] = u.values[bad] - dec.avg[dec.owner[bad]]
    assert np.max(np.abs(good + pieces - u.values)) <= 1e-12 * u.sup()
    assert np.max(np.abs(dec.piece_integrals())) <= 1e-12
    rep = cz.verify_cz(dec)
    assert rep.passed
    assert [c.name for c in rep.checks] == list(cz.CZ_CHECKS)
    assert dec.C_D <= 8.0**2 * math.exp(2 * 1 * fam.warp.C_diag * 8.0)


def test_scaling_covariance():
    fam = cz.make_family(CON, 1, 2, R_max=9.0, n0=6, k_max=4)
    u = cz.random_cell_function(fam, np.random.default_rng(5), 3)
    a = cz.cz_decompose(u, 0.3 * u.sup())
    b = cz.cz_decompose(u.scaled(7.0), 2.1 * u.sup())
    assert a.table() == b.table()


def test_hyperbolic_bump_passes_without_global_doubling():
    fam = cz.make_family(HYP, 1, 2, R_max=9.0, n0=8, k_max=3)
    # the metric balls stop doubling at large radius
    assert cz.doubling_ratio(HYP, 1, 2, 5.0, 4.0) > 10 * cz.doubling_ratio(HYP, 1, 2, 5.0, 0.25)
    f = lambda r, th: 50.0 * np.exp(-((r - 6.0) ** 2) * 8 - (th / np.exp(-6.0)) ** 2)
    u = cz.CellFunction.from_callable(f, fam, 3, (5.0, 7.0), (-3 * np.exp(-6.0), 3 * np.exp(-6.0)))
    dec = cz.cz_decompose(u, 1.0)
    assert dec.count >= 1
    rep = cz.verify_cz(dec)
    assert rep["doubling"].passed and rep.passed


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), kind=st.sampled_from(["flat", "hyp", "con"]), logscale=st.floats(0.0, 4.0))
def test_decomposition_invariants(seed, kind, logscale):
    w, R = {"flat": (FLAT, 0), "hyp": (HYP, 1), "con": (CON, 1)}[kind]
    fam = cz.make_family(w, R, 2, R_max=R + 8.0, n0=8, k_max=3)
    u = cz.random_cell_function(fam, np.random.default_rng(seed), 3)
    lam = u.sup() * math.exp(-logscale)
    dec = cz.cz_decompose(u, lam)
    rep = cz.verify_cz(dec)
    assert rep.passed, rep.failures()
    # off the selected cells every fine value is below the threshold, and the
    # stopping averages exceed it by at most the parent-measure ratio
    good = dec.owner < 0
    assert np.all(np.abs(u.values[good]) < lam)
    assert np.all(np.abs(dec.avg) <= fam.C3 * lam * (1 + 1e-12))


def test_bad_threshold():
    fam = cz.make_family(FLAT, 0, 2, R_max=4.0)
    u = cz.CellFunction.from_cells(fam, 0, [1], [[0]], [4.0])
    with pytest.raises(DomainError):
        cz.cz_decompose(u, 0.0)
