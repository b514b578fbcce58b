import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lp_ends import singular_kernels as sk
from lp_ends.errors import DomainError, PreconditionError, ResolutionError
from lp_ends.warp_geometry import make_warp

# 2 pi int g(rho^2) J0(z rho) rho d rho by adaptive quadrature (scipy quad)
HAT_ORACLE = {0.0: 1.5 * math.pi, 1.0: 2.40941046338313, 5.0: 0.915083985951416, 20.0: 0.039610093455862}
# int |f(x - y0) - f(x)| dx on 2 < |x| < 64, f = xy/|z|^4, y0 = 0.5 (cos .3, sin .3)
SHIFT_ORACLE = 0.98089054891


@functools.lru_cache(maxsize=1)
def _unit_family():
    return sk.make_symbol_family(12)


@pytest.fixture(scope="module")
def fam():
    return _unit_family()


@pytest.fixture(scope="module")
def zeta():
    return sk.make_zeta()


@pytest.fixture(scope="module")
def hyp():
    return make_warp("hyperbolic", (1.0,), r_range=(1.0, 10.0))


def test_empty_annulus_rejected():
    with pytest.raises(DomainError):
        sk.make_symbol_family(3, annulus=(4.0, 1.0))
    with pytest.raises(DomainError):
        sk.make_symbol_family(3, annulus=(0.0, 1.0))


def test_annulus_support(fam):
    assert fam(0, 2.0, 0.0, 0.0, 0.0) == 0.0
    for a in np.linspace(0, 2 * np.pi, 13):
        assert fam(3, 2.0, 0.0, 10 * math.cos(a), 10 * math.sin(a)) == 0.0
    assert fam(3, 2.0, 0.0, 1.5, 0.0) > 0.0


def test_seminorm_table_matches_finite_differences(fam):
    rng = np.random.default_rng(0)
    rad = np.sqrt(rng.uniform(1.0, 4.0, 1000))
    ang = rng.uniform(0, 2 * np.pi, 1000)
    rho, eta = rad * np.cos(ang), rad * np.sin(ang)
    for key, bound in fam.seminorms.items():
        fd = np.max(np.abs(sk.finite_difference_derivative(fam, 0, rho, eta, *key)))
        assert bound / 2 <= fd <= 2 * bound, key


def test_exact_derivatives_match_finite_differences(fam):
    rng = np.random.default_rng(1)
    rho, eta = rng.uniform(-2, 2, 200), rng.uniform(-2, 2, 200)
    for key in fam.seminorms:
        exact = fam.derivative(0, rho, eta, *key)
        fd = sk.finite_difference_derivative(fam, 0, rho, eta, *key)
        assert np.max(np.abs(exact - fd)) < 1e-4 * max(1.0, fam.seminorms[key])


def test_hat_against_quadrature_oracle(fam):
    z = np.array(sorted(HAT_ORACLE))
    np.testing.assert_allclose(sk.radial_hat(fam, z), [HAT_ORACLE[x] for x in z], rtol=1e-9, atol=1e-12)


def test_hat_fft_cross_check(fam):
    z, v = sk.fft_hat(fam, 2.5, 256)
    assert np.max(np.abs(v - sk.radial_hat(fam, z))) < 1e-3


def test_fft_hat_reports_required_size(fam):
    with pytest.raises(ResolutionError) as exc:
        sk.fft_hat(fam, 2.5, 32, z_max=100.0)
    assert exc.value.required_size >= 160


def test_hat_tail_is_negligible(fam):
    assert sk.hat_table_tail(fam) < 1e-6


def test_zero_family_gives_zero_everywhere(zeta, hyp):
    fam0 = sk.make_symbol_family(6, amplitudes=0.0)
    assert fam0.zero
    kern = sk.kernel_KM(fam0, zeta, 4, hyp)
    g = sk.build_kernel_grid(kern, 2.0, 2.0, 32)
    assert sk.l2_norm_estimate(g) == 0.0
    u = sk.bump(g, 0.25)
    assert np.all(sk.apply_BM(g, u) == 0.0)
    assert sk.lp_scan(g, [u], [1.5, 2.0]).max == 0.0
    assert sk.weak11_scan(g, [u], norm=1.0).max == 0.0
    assert sk.remainder_schur(fam0, zeta, 3, None, hyp, 2.0) == 0.0


def test_M0_kernel_real_and_even(fam, zeta, hyp):
    kern = sk.kernel_KM(fam, zeta, 0, hyp)
    rng = np.random.default_rng(2)
    r, rp = rng.uniform(2, 8, 500), rng.uniform(2, 8, 500)
    th, thp = rng.uniform(0, 1, 500), rng.uniform(0, 1, 500)
    a = kern(r, th, rp, thp)
    b = kern(r, thp, rp, th)
    assert np.isrealobj(a)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_proper_support(fam, zeta, hyp):
    kern = sk.kernel_KM(fam, zeta, 6, hyp)
    rng = np.random.default_rng(3)
    ang = rng.uniform(0, 2 * np.pi, 10_000)
    dist = rng.uniform(1.0, 3.0, 10_000)
    r = rng.uniform(3, 6, 10_000)
    th = rng.uniform(-1, 1, 10_000)
    vals = kern(r, th, r + dist * np.cos(ang), th + dist * np.sin(ang))
    assert np.all(vals == 0.0)


def test_M_increment_adds_one_term(fam, zeta, hyp):
    rng = np.random.default_rng(4)
    pts = (rng.uniform(2, 4, 300), rng.uniform(0, 1, 300), rng.uniform(2, 4, 300), rng.uniform(0, 1, 300))
    for M in (0, 3, 7):
        diff = sk.kernel_KM(fam, zeta, M + 1, hyp)(*pts) - sk.kernel_KM(fam, zeta, M, hyp)(*pts)
        term = sk.kernel_KM(fam, zeta, M, hyp).term(M + 1, *pts)
        np.testing.assert_allclose(diff, term, rtol=1e-12, atol=1e-9 * 2.0 ** (2 * M))


def test_negative_M_rejected(fam, zeta, hyp):
    with pytest.raises(DomainError):
        sk.kernel_KM(fam, zeta, -1, hyp)


def test_coarse_grid_reports_required_size(fam, zeta, hyp):
    kern = sk.kernel_KM(fam, zeta, 6, hyp)
    with pytest.raises(ResolutionError) as exc:
        sk.build_kernel_grid(kern, 2.0, 4.0, 16)
    assert exc.value.required_size > 16


@pytest.fixture(scope="module")
def grid6(fam, zeta, hyp):
    kern = sk.kernel_KM(fam, zeta, 4, hyp)
    return sk.build_kernel_grid(kern, 2.0, 2.0, 64)


def test_output_vanishes_far_from_support(grid6):
    X, Y = grid6.scaled_coords()
    u = ((X < 0.4) & (Y < 0.4)).astype(float)
    v = sk.apply_BM(grid6, u)
    # unscaled distance exceeds 1 in r alone
    far = X > 0.4 + 1.0 + grid6.h
    assert np.any(far)
    assert np.all(v[far] == 0.0)


def test_adjoint_consistency(grid6):
    rng = np.random.default_rng(5)
    u, v = rng.standard_normal((2, 64, 64))
    lhs = grid6.inner(grid6.apply(u), v)
    kt = grid6.kern.transpose()
    gt = sk.build_kernel_grid(kt, grid6.r0, grid6.L, grid6.N)
    assert abs(lhs - grid6.inner(u, gt.apply(v))) <= 1e-8 * abs(lhs)
    assert abs(lhs - grid6.inner(u, grid6.apply_adjoint(v))) <= 1e-8 * abs(lhs)


def test_l2_estimate_is_scale_invariant(grid6):
    nrm = sk.l2_norm_estimate(grid6)
    assert nrm > 0
    u = sk.bump(grid6, 0.25)
    a = grid6.lp_norm(grid6.apply(u), 2) / grid6.lp_norm(u, 2)
    b = grid6.lp_norm(grid6.apply(2 * u), 2) / grid6.lp_norm(2 * u, 2)
    assert a == pytest.approx(b, rel=1e-12)
    assert a <= nrm * (1 + 1e-6)


def test_lp_scan_domain(grid6):
    u = sk.bump(grid6, 0.25)
    for p in (1.0, 2.5):
        with pytest.raises(DomainError):
            sk.lp_scan(grid6, [u], [p])


def test_weak11_lambda_above_sup_gives_zero(grid6):
    u = sk.bump(grid6, 0.25)
    top = float(np.max(np.abs(grid6.apply(u))))
    assert sk.weak11_scan(grid6, [u], lambdas=[top * 1.01], norm=1.0).max == 0.0
    assert sk.weak11_scan(grid6, [u], lambdas=[top * 0.5], norm=1.0).max > 0.0


def test_flat_remainder_vanishes(fam, zeta):
    flat = make_warp("flat", (1.0,), r_range=(1.0, 10.0))
    assert all(sk.remainder_schur(fam, zeta, k, None, flat, 2.0, r_range=(1, 9)) == 0.0 for k in range(6))


def test_hyperbolic_remainder_decays(fam, zeta, hyp):
    b = np.array([sk.remainder_schur(fam, zeta, k, None, hyp, 2.0, r_range=(1, 9)) for k in range(2, 9)])
    assert np.all(b > 0)
    ratio = math.exp(np.polyfit(np.arange(2, 9), np.log(b), 1)[0])
    assert ratio <= 0.75


def test_remainder_support_floor(zeta, hyp):
    floor = sk.remainder_support_floor(zeta, hyp, [2.0, 4.0, 8.0])
    # the remainder lives where one of the two cutoff arguments leaves the inner ball
    assert 0.3 < floor < math.inf


def test_remainder_index_beyond_family(fam, zeta, hyp):
    with pytest.raises(DomainError):
        sk.remainder_schur(fam, zeta, 13, None, hyp)


def test_symbol_bound_finite_and_uniform(fam, zeta, hyp):
    b0 = sk.symbol_cz_bound(sk.kernel_KM(fam, zeta, 0, hyp))
    assert b0.passed and np.isfinite(b0.constant)
    c6 = sk.symbol_cz_bound(sk.kernel_KM(fam, zeta, 6, hyp), samples=1500).constant
    c12 = sk.symbol_cz_bound(sk.kernel_KM(fam, zeta, 12, hyp), samples=1500).constant
    assert max(c6, c12) / min(c6, c12) <= 1.5


def test_term_profile_peaks_at_matching_scale(fam, zeta, hyp):
    # the peak index tracks k0 with a fixed offset and its size scales like 2^(k0 (n+1))
    kern = sk.kernel_KM(fam, zeta, 12, hyp)
    offsets, scaled = [], []
    for k0 in (1, 2, 3, 4):
        prof = sk.term_profile(kern, 2.0**-k0)
        offsets.append(int(np.argmax(prof)) - k0)
        scaled.append(float(np.max(prof)) * 2.0 ** (-3 * k0))
    assert len(set(offsets)) == 1
    assert max(scaled) / min(scaled) <= 1.5


def test_hormander_zero_shift():
    f = lambda z: z[0] * z[1] / np.maximum(z[0] ** 2 + z[1] ** 2, 1e-300) ** 2
    res = sk.hormander_check(sk.shift_kernel(f), 1.0, lambda x: np.zeros(2), 2, C_H=1.01)
    assert res.integral == 0.0


def test_hormander_shift_oracle_and_scale_invariance():
    f = lambda z: z[0] * z[1] / np.maximum(z[0] ** 2 + z[1] ** 2, 1e-300) ** 2
    K = sk.shift_kernel(f)
    vals = []
    for t in (0.25, 1.0, 4.0):
        y0 = 0.5 * t * np.array([math.cos(0.3), math.sin(0.3)])
        res = sk.hormander_check(K, t, lambda x, y0=y0: y0, 2, C_H=1.01)
        assert res.passed
        vals.append(res.integral)
    assert vals[1] == pytest.approx(SHIFT_ORACLE, rel=1e-4)
    assert max(vals) / min(vals) - 1 <= 0.05


def test_hormander_constant():
    assert sk.hormander_constant(2) == pytest.approx(3 * math.pi, rel=1e-8)


def test_hormander_precondition():
    f = lambda z: z[0] * z[1] / np.maximum(z[0] ** 2 + z[1] ** 2, 1e-300) ** 2
    with pytest.raises(PreconditionError):
        sk.hormander_check(sk.shift_kernel(f), 1.0, lambda x: np.zeros(2), 2, C_H=0.1)


def test_hormander_dimension_three():
    f = lambda z: z[0] * z[1] * z[2] / np.maximum(np.sum(np.square(z), axis=0), 1e-300) ** 3
    y0 = np.array([0.3, 0.1, 0.2])
    res = sk.hormander_check(sk.shift_kernel(f), 1.0, lambda x: y0, 3)
    assert 0 < res.integral <= res.bound


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 200.0))
def test_hat_bounded_by_zero_value(z):
    assert abs(float(sk.radial_hat(_unit_family(), np.array([z]))[0])) <= 1.5 * math.pi + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_zeta_range_and_plateau(s, d):
    zeta = sk.make_zeta()
    v = float(zeta(np.array(s), np.array(d)))
    assert 0.0 <= v <= 1.0
    if math.hypot(s, d) <= 0.5:
        assert v == 1.0
    if math.hypot(s, d) >= 1.0:
        assert v == 0.0
