import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lp_ends.dyadic_partition import build_cutoffs, eval_cutoff, partial_sum, partition_residual
from lp_ends.errors import DomainError

# psi from scipy.integrate.quad of the bump exp(-1/(t(1-t)))
PSI_1_35 = 0.84649617640890262
PSI_300_OVER_256 = 0.9970657038277404


def test_plateaus():
    c = build_cutoffs(1)
    assert c.psi(0.5) == 1.0 and c.psi(3.0) == 0.0
    assert c.phi(1.0) == 0.0 and c.phi(2.0) == 1.0 and c.phi(4.0) == 0.0


def test_phi_inside_ramp():
    c = build_cutoffs(1)
    v = c.phi(2.7)
    assert 0.0 < v <= 1.0
    assert v == pytest.approx(c.psi(1.35) - c.psi(2.7), abs=0)
    assert v == pytest.approx(PSI_1_35, abs=1e-13)


def test_eval_cutoff_examples():
    c = build_cutoffs(1)
    assert eval_cutoff(c, "phi0", 0.0) == 1.0
    assert eval_cutoff(c, "phi", 8.0) == 0.0
    assert eval_cutoff(c, "phi1", 2.0) == 1.0
    with pytest.raises(DomainError):
        eval_cutoff(c, "phi", -1.0)
    with pytest.raises(DomainError):
        eval_cutoff(c, "chi", 1.0)


def test_bad_smoothness():
    with pytest.raises(DomainError):
        build_cutoffs(0)


def test_residual_examples():
    c = build_cutoffs(1)
    assert partition_residual(c, [0.0], 3).residual == 0.0
    assert partition_residual(c, [0.0, 100.0], 7).residual <= 1e-12
    assert partial_sum(c, 300.0, 7) == pytest.approx(PSI_300_OVER_256, abs=1e-13)
    assert 0.0 < partial_sum(c, 300.0, 7) < 1.0
    assert partition_residual(c, [300.0], 7).beyond.tolist() == [300.0]


@pytest.mark.parametrize("s", [1, 2, 3])
def test_dense_partition_residual(s):
    c = build_cutoffs(s)
    lam = np.linspace(0, 2.0**11, 20001)
    assert partition_residual(c, lam, 10).residual <= 1e-12


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(0.0, 1e6), K=st.integers(0, 25))
def test_telescoping(lam, K):
    c = build_cutoffs(1)
    assert abs(partial_sum(c, lam, K) - c.psi(lam * 2.0 ** -(K + 1))) <= 1e-13


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(0.0, 100.0), s=st.integers(1, 4))
def test_cutoff_ranges(lam, s):
    c = build_cutoffs(s)
    for name in ("psi", "phi0", "phi", "phi1"):
        v = c(name, lam)
        assert -1e-15 <= v <= 1.0 + 1e-15
    assert c.psi(lam) >= c.psi(lam + 0.1) - 1e-15


def test_supports_of_neighbouring_scales_touch_only_at_zeros():
    c = build_cutoffs(1)
    lam = np.linspace(0, 64, 640001)
    prod = c.phi(lam) * c.phi(lam / 4.0)
    assert np.max(np.abs(prod)) == 0.0


def test_phi1_is_one_on_supp_phi():
    c = build_cutoffs(1)
    lam = np.linspace(0, 16, 160001)
    assert np.max(np.abs(c.phi1(lam) * c.phi(lam) - c.phi(lam))) == 0.0
