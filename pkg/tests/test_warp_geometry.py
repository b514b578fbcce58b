import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lp_ends.errors import DomainError, GridTooCoarse, InvalidMode, InvalidWarp, NotTemperate
from lp_ends.spectral_calculus import eigendecompose
from lp_ends.warp_geometry import (
    SymmetricOperator,
    assemble_operator,
    build_model_end,
    check_temperance,
    make_temperate_weight,
    make_warp,
    verify_warp,
)


def test_flat_warp_constants():
    w = make_warp("flat")
    assert np.all(w(np.linspace(1, 10, 7)) == 1.0)
    assert w.C_diag == 1.0


def test_hyperbolic_unit_ratio_is_e():
    w = make_warp("hyperbolic")
    r = np.linspace(1, 9, 17)
    assert np.allclose(w(r), np.exp(-r), rtol=0, atol=0)
    assert np.allclose(w(r) / w(r + 1), np.e, rtol=1e-14)


def test_conical_slow_variation_matches_dense_maximum():
    w = make_warp("conical", r_range=(1.0, 10.0))
    # independent oracle: r'/r over |r - r'| <= 1 is largest at r = 1
    r = np.linspace(1, 10, 9001)
    best = max(np.max(w(r[(r >= x - 1) & (r <= x + 1)]) / w(x)) for x in r[::50])
    assert w.C_diag == pytest.approx(2.0, rel=1e-3)
    assert best == pytest.approx(2.0, rel=1e-3)


def test_verify_flat_and_hyperbolic():
    rep = verify_warp(make_warp("flat"), (1.0, 10.0))
    assert rep.passed
    assert rep.constants["C_diag"] == 1.0
    rep = verify_warp(make_warp("hyperbolic"), (1.0, 10.0), k_max=3)
    assert rep.passed
    assert rep.constants["C_der"] == pytest.approx(1.0, abs=1e-12)


def test_gaussian_profile_fails_slow_variation():
    w = make_warp("custom", (lambda r: np.exp(-r**2),), r_range=(1.0, 10.0), validate=False)
    rep = verify_warp(w, (1.0, 10.0))
    assert not rep.passes["C_diag"]
    # ratio across a unit step at r = 9 is e^(2*9+1)
    assert rep.constants["C_diag"] >= 0.99 * np.exp(19.0)


def test_custom_profile_rejected_when_validated():
    with pytest.raises(InvalidWarp):
        make_warp("custom", (lambda r: np.exp(-r**2),), r_range=(1.0, 10.0))


def test_unknown_warp_kind():
    with pytest.raises(InvalidWarp):
        make_warp("spherical")


def test_constant_and_polynomial_weights():
    W = make_temperate_weight("constant")
    assert W(3.0) == 1.0 and W.C == 1.0 and W.M == 0.0
    W = make_temperate_weight("polynomial_s", (2.0,))
    assert W(2.0) == pytest.approx(9.0)
    # the bound holds with exponent 2; the sup is approached only as r -> 0
    assert 1.5 <= W.M <= 2.0
    r = np.linspace(1, 33, 257)
    assert check_temperance(W, r) <= 1.0 + 1e-12


def test_inverse_conical_power_has_unit_exponent():
    w = make_warp("conical", r_range=(1.0, 40.0))
    W = make_temperate_weight("warp_power", (-1.0,), warp=w)
    assert W(5.0) == pytest.approx(5.0)
    assert W.M == pytest.approx(1.0, rel=0.05)


def test_hyperbolic_power_is_not_temperate():
    w = make_warp("hyperbolic", r_range=(1.0, 40.0))
    with pytest.raises(NotTemperate):
        make_temperate_weight("warp_power", (1.0,), warp=w)
    W = make_temperate_weight("warp_power", (1.0,), warp=w, require_temperate=False)
    assert not W.temperate


def test_flat_volume():
    end = build_model_end(0.0, 1.0, 8, 2, 16, make_warp("flat"))
    assert end.volume("dg") == pytest.approx(2 * np.pi, rel=1e-14)


def test_hyperbolic_volume_closed_form():
    end = build_model_end(0.0, 1.0, 256, 2, 16, make_warp("hyperbolic", r_range=(0.0, 2.0)))
    assert end.volume("dg") == pytest.approx(2 * np.pi * (np.e - 1), rel=1e-3)
    assert end.volume("dtildeg") == pytest.approx(2 * np.pi, rel=1e-14)


def test_model_end_errors():
    with pytest.raises(GridTooCoarse):
        build_model_end(1.0, 2.0, 4)
    with pytest.raises(DomainError):
        build_model_end(2.0, 1.0, 16)


def test_flat_dirichlet_ground_state():
    end = build_model_end(0.0, 1.0, 256, 2, 16, make_warp("flat"))
    ms = eigendecompose(assemble_operator(end, "plain", 0))
    assert ms.evals[0] == pytest.approx(np.pi**2, rel=0.01)


def test_flat_mode_shift():
    end = build_model_end(0.0, 1.0, 64, 2, 16, make_warp("flat"))
    a = eigendecompose(assemble_operator(end, "plain", 0)).evals
    b = eigendecompose(assemble_operator(end, "plain", 3)).evals
    assert np.allclose(b - a, 9.0, atol=1e-9)


def test_four_cell_second_difference():
    dr = 0.25
    op = SymmetricOperator("modified", (0,), 0, np.full(4, 2 / dr**2), np.full(3, -1 / dr**2), np.ones(4), np.full(4, dr))
    ev = eigendecompose(op).evals
    assert np.allclose(ev, [6.111456180001682, 22.11145618000168, 41.88854381999832, 57.88854381999831], rtol=1e-13)


def test_single_cell_operator():
    op = SymmetricOperator("modified", (0,), 0, np.array([3.5]), np.zeros(0), np.ones(1), np.ones(1))
    assert eigendecompose(op).evals[0] == 3.5


def test_mode_out_of_range():
    end = build_model_end(1.0, 2.0, 16, 2, 8, make_warp("flat"))
    with pytest.raises(InvalidMode):
        assemble_operator(end, "plain", 4)
    with pytest.raises(InvalidMode):
        assemble_operator(end, "plain", (1, 2))


@pytest.mark.parametrize("kind", ["hyperbolic", "conical"])
def test_plain_and_modified_spectra_agree(kind):
    end = build_model_end(1.0, 9.0, 128, 2, 16, make_warp(kind, r_range=(1.0, 12.0)))
    for m in range(5):
        a = eigendecompose(assemble_operator(end, "plain", m)).evals
        b = eigendecompose(assemble_operator(end, "modified", m)).evals
        assert np.max(np.abs(a - b) / np.abs(b)) <= 1e-10


@pytest.mark.parametrize("kind", ["hyperbolic", "conical"])
def test_refinement_moves_low_eigenvalues_little(kind):
    w = make_warp(kind, r_range=(1.0, 12.0))
    lo = eigendecompose(assemble_operator(build_model_end(1.0, 9.0, 256, 2, 16, w), "plain", 1)).evals[:20]
    hi = eigendecompose(assemble_operator(build_model_end(1.0, 9.0, 512, 2, 16, w), "plain", 1)).evals[:20]
    assert np.max(np.abs(hi / lo - 1)) <= 0.05


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["flat", "hyperbolic", "conical"]),
    variant=st.sampled_from(["plain", "modified"]),
    m=st.integers(0, 7),
    seed=st.integers(0, 2**31 - 1),
)
def test_operator_is_symmetric_in_its_measure(kind, variant, m, seed):
    end = build_model_end(1.0, 6.0, 48, 2, 16, make_warp(kind, r_range=(1.0, 8.0)))
    op = assemble_operator(end, variant, m)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, end.N))
    lhs = op.inner(op.apply(u), v) - op.inner(u, op.apply(v))
    scale = np.sqrt(abs(op.inner(op.apply(u), op.apply(u))) * abs(op.inner(v, v)))
    assert abs(lhs) <= 1e-10 * scale


@settings(max_examples=30, deadline=None)
@given(r=st.floats(1.0, 8.0), d=st.floats(-1.0, 1.0), kind=st.sampled_from(["hyperbolic", "conical"]))
def test_slow_variation_holds_pointwise(r, d, kind):
    w = make_warp(kind, r_range=(0.0 if kind == "hyperbolic" else 0.5, 10.0))
    assert w(r + d) / w(r) <= w.C_diag * (1 + 1e-9)
