import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from wproj import (CostModel, DataSet, MomentInputs, compute_bartlett_coeffs, correct_quantile,
                   correct_statistic, make_linear_model, plugin_moments)
from wproj.bartlett import U, equivalent_threshold
from wproj.errors import InvalidMoments

GAUSS_LINEAR = MomentInputs(alpha2=1.0, alpha3=0.0, alpha4=3.0, alpha2_t=1.0, alpha3_t=0.0,
                            e_h_grad2=0.0, e_h_curv=0.0)
CHI95 = stats.chi2.ppf(0.95, 1)


def test_u_constants():
    expected = [2 ** k * math.gamma(k + 0.5) / math.gamma(0.5) for k in (1, 2, 3)]
    np.testing.assert_allclose(U, expected, rtol=1e-15)


def test_gaussian_linear_coefficients():
    c = compute_bartlett_coeffs(GAUSS_LINEAR)
    assert (c.k11, c.k31, c.k22) == (0.0, 0.0, 0.0)
    assert c.k42 == pytest.approx(-6.0)
    np.testing.assert_allclose([c.b0, c.b1, c.b2, c.b3], [-0.75, 1.5, -0.75, 0.0], atol=1e-15)
    np.testing.assert_allclose(c.c, [-1.5, 0.5, 0.0], atol=1e-15)
    assert c.alpha4_t == 0.0


def test_symmetric_null_odd_coefficients_vanish():
    mom = MomentInputs(alpha2=2.0, alpha3=0.0, alpha4=12.0, alpha2_t=1.5, alpha3_t=0.0,
                       e_h_grad2=0.0, e_h_curv=0.3, t_hsh=0.2)
    c = compute_bartlett_coeffs(mom)
    assert c.k11 == 0.0 and c.k31 == 0.0


@settings(max_examples=100)
@given(st.floats(0.1, 5), st.floats(-3, 3), st.floats(0.1, 30), st.floats(0.1, 5), st.floats(-3, 3),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_c_reproduced_from_b(a2, a3, a4, t2, t3, e1, e2, hsh, third):
    c = compute_bartlett_coeffs(MomentInputs(a2, a3, a4, t2, t3, e1, e2, hsh, third))
    B = (c.b0, c.b1, c.b2, c.b3)
    for k in (1, 2, 3):
        expect = -2.0 / U[k - 1] * sum(B[k:])
        assert c.c[k - 1] == pytest.approx(expect, rel=1e-12, abs=1e-12 * (1 + max(map(abs, B))))
    # B_0 + ... + B_3 = 0 keeps the coverage correction zero at t = 0
    assert abs(sum(B)) <= 1e-10 * (1 + max(map(abs, B)))


def test_invalid_moments():
    with pytest.raises(InvalidMoments):
        compute_bartlett_coeffs(MomentInputs(0.0, 0, 1, 1, 0, 0, 0))
    with pytest.raises(InvalidMoments):
        compute_bartlett_coeffs(MomentInputs(1.0, 0, 3, -1, 0, 0, 0))


def test_plugin_reproduces_analytic():
    x = np.random.default_rng(0).standard_normal(10 ** 6)[:, None]
    mom = plugin_moments(DataSet(x), make_linear_model(1), CostModel.identity(1))
    c = compute_bartlett_coeffs(mom)
    np.testing.assert_allclose(c.c, [-1.5, 0.5, 0.0], rtol=0.02, atol=0.02)


class TestCorrectionI:
    coeffs = compute_bartlett_coeffs(GAUSS_LINEAR)

    def test_gaussian_linear_n20(self):
        corr = correct_quantile(self.coeffs, 2.0, 0.05, 20)
        C = (-1.5 + 0.5 * CHI95) / 20
        assert C == pytest.approx(0.0210365, abs=1e-7)
        assert corr.factor == pytest.approx(1 - C, rel=1e-14)
        assert corr.value == pytest.approx(2.0 * (1 - C), rel=1e-14)

    def test_zero_coefficients_identity(self):
        zero = dataclasses.replace(self.coeffs, c1=0.0, c2=0.0, c3=0.0)
        assert correct_quantile(zero, 3.3, 0.05, 10).value == pytest.approx(3.3, rel=1e-15)

    def test_large_n(self):
        assert correct_quantile(self.coeffs, 1.0, 0.05, 10 ** 6).factor == pytest.approx(1.0, abs=1e-5)

    def test_overflow(self):
        heavy = compute_bartlett_coeffs(MomentInputs(1.0, 0.0, 300.0, 1.0, 0.0, 0.0, 0.0))
        with pytest.warns(RuntimeWarning):
            corr = correct_quantile(heavy, 1.0, 0.05, 2)
        assert corr.overflow and corr.value == 1.0

    def test_alpha_independent_regime(self):
        # symmetric null with k42 = 0 makes B2 = B3 = 0, so only C1 survives
        a2, a4, t2, t4 = 1.0, 3.0, 1.0, 0.0
        e2 = (2 * a4 / a2 ** 2) * t2 ** 2 / 12
        c = compute_bartlett_coeffs(MomentInputs(a2, 0.0, a4, t2, 0.0, 0.0, e2))
        assert c.b2 == pytest.approx(0, abs=1e-15) and c.b3 == 0
        f05 = correct_quantile(c, 1.0, 0.05, 30).factor
        f10 = correct_quantile(c, 1.0, 0.10, 30).factor
        assert f05 == pytest.approx(f10, abs=1e-12)


class TestCorrectionII:
    coeffs = compute_bartlett_coeffs(GAUSS_LINEAR)

    def test_zero_stat(self):
        assert correct_statistic(self.coeffs, 0.0, 1.0, 1.0, 20).value == 0.0

    def test_gaussian_linear_n20(self):
        corr = correct_statistic(self.coeffs, 3.8415, 1.0, 1.0, 20)
        assert corr.factor == pytest.approx(1 + (-1.5 + 0.5 * 3.8415) / 20, rel=1e-14)
        assert corr.value == pytest.approx(3.92232, abs=1e-5)

    def test_identity_when_zero(self):
        zero = dataclasses.replace(self.coeffs, c1=0.0, c2=0.0, c3=0.0)
        assert correct_statistic(zero, 2.7, 1.0, 2.0, 10).value == pytest.approx(2.7, rel=1e-14)

    def test_invalid(self):
        with pytest.raises(InvalidMoments):
            correct_statistic(self.coeffs, 1.0, 0.0, 1.0, 20)
        with pytest.raises(ValueError):
            correct_statistic(self.coeffs, 1.0, 1.0, 1.0, 1)

    @pytest.mark.parametrize("n", [50, 100, 200])
    def test_agrees_with_correction_i(self, n):
        z = CHI95
        thr_i = correct_quantile(self.coeffs, z, 0.05, n).value
        thr_ii = equivalent_threshold(self.coeffs, z, 1.0, 1.0, n)
        assert abs(thr_i - thr_ii) <= 5 / n ** 2 * z
