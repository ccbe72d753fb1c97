import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wproj import (CostModel, DataSet, make_linear_model, make_quadratic_norm_model,
                   make_zero_power_model, with_fd_third)
from wproj.errors import DataParseError, InvalidDimension, MissingDerivatives
from wproj.model import zero_power_outside


def fd_jac(model, X, eps=1e-5):
    n, m = X.shape
    out = np.empty((n, model.d, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        out[:, :, j] = (model.h(X + e) - model.h(X - e)) / (2 * eps)
    return out


def fd_hess(model, X, eps=1e-5):
    n, m = X.shape
    out = np.empty((n, model.d, m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        out[:, :, :, j] = (model.jac(X + e) - model.jac(X - e)) / (2 * eps)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_linear_model_values(m):
    model = make_linear_model(m)
    x = np.arange(1.0, m + 1)[None]
    assert model.d == m
    np.testing.assert_array_equal(model.h(x), x)
    np.testing.assert_array_equal(model.jac(x)[0], np.eye(m))
    assert not model.hess(x).any()
    assert not model.third(x).any()


def test_linear_model_spot_values():
    np.testing.assert_array_equal(make_linear_model(2).h(np.array([[1.0, -2.0]])), [[1.0, -2.0]])
    mod = make_linear_model(1)
    assert mod.h(np.array([[3.0]]))[0, 0] == 3.0
    assert mod.jac(np.array([[3.0]]))[0, 0, 0] == 1.0


def test_quadratic_model_values():
    mod = make_quadratic_norm_model(1, 1.0)
    x = np.array([[2.0]])
    assert mod.h(x)[0, 0] == 3.0
    assert mod.jac(x)[0, 0, 0] == 4.0
    assert mod.hess(x)[0, 0, 0, 0] == 2.0
    assert make_quadratic_norm_model(2, 1.0).h(np.array([[1.0, 1.0]]))[0, 0] == 1.0


@pytest.mark.parametrize("factory", [make_linear_model, make_quadratic_norm_model])
@pytest.mark.parametrize("m", [0, -1])
def test_invalid_dimension(factory, m):
    with pytest.raises(InvalidDimension):
        factory(m)


@pytest.mark.parametrize("model", [make_linear_model(2), make_quadratic_norm_model(3, 0.5),
                                   make_zero_power_model(0.01, 3)],
                         ids=["linear", "quadratic", "zero-power"])
def test_derivatives_match_finite_differences(model):
    rng = np.random.default_rng(0)
    if model.name == "zero_power":
        # probe away from the kinks so the smoothing window is resolved
        X = rng.uniform(-20, 20, size=(40, 1))
    else:
        X = rng.normal(size=(40, model.m))
    assert rel_err(model.jac(X), fd_jac(model, X)) <= 1e-4
    assert rel_err(model.hess(X), fd_hess(model, X)) <= 1e-4
    H = model.hess(X)
    np.testing.assert_allclose(H, np.swapaxes(H, -1, -2), atol=1e-12)


def test_fd_third_flag():
    base = make_quadratic_norm_model(2)
    stripped = type(base)(m=2, d=1, h=base.h, jac=base.jac, hess=base.hess, third=None)
    with pytest.raises(MissingDerivatives):
        stripped.require_third()
    synth = with_fd_third(stripped)
    X = np.random.default_rng(1).normal(size=(5, 2))
    np.testing.assert_allclose(synth.third(X), 0.0, atol=1e-6)


class TestZeroPower:
    model = make_zero_power_model(0.01, 4)
    geo = model.params["geometry"]

    def test_value_at_origin(self):
        assert abs(self.model.h(np.array([[0.0]]))[0, 0] + 1) <= 1e-6

    @pytest.mark.parametrize("sign", [1.0, -1.0])
    def test_value_at_first_atom(self, sign):
        x1 = 2 + math.sqrt(10)
        assert abs(self.geo.centers[1] - x1) < 1e-12
        assert abs(self.model.h(np.array([[sign * x1]]))[0, 0] - 1.5) <= 1e-6

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_plateaus(self, k):
        assert abs(self.model.h(np.array([[self.geo.centers[k]]]))[0, 0] - (1 + 2.0 ** -k)) <= 1e-6

    def test_lower_bound_on_grid(self):
        grid = np.linspace(-self.geo.support_edge, self.geo.support_edge, 20001)[:, None]
        assert self.model.h(grid).min() >= -1 - 1e-6

    def test_outside_range_clamps(self):
        far = np.array([[self.geo.support_edge + 5.0], [-self.geo.support_edge - 5.0]])
        np.testing.assert_allclose(self.model.h(far)[:, 0], 2.0)
        assert zero_power_outside(self.model, far).all()
        assert not zero_power_outside(self.model, np.zeros((1, 1))).any()


def test_cost_model_rejects_indefinite():
    with pytest.raises(InvalidDimension, match="eigenvalue"):
        CostModel(np.array([[1.0, 0.99], [0.99, 0.98]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_cost_norm_positive(m, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, m))
    S = A @ A.T + 0.1 * np.eye(m)
    c = CostModel(S)
    np.testing.assert_allclose(S @ c.solve(np.eye(m)), np.eye(m), atol=1e-10 * np.linalg.cond(S))
    v = rng.normal(size=(3, m))
    q = c.sqnorm(v)
    assert np.all(q > 0)
    np.testing.assert_allclose(q, np.einsum("ij,jk,ik->i", v, np.linalg.inv(S), v), rtol=1e-9)
    assert c.sqnorm(np.zeros((1, m)))[0] == 0.0


def test_dataset_validation():
    with pytest.raises(ValueError):
        DataSet(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        DataSet(np.ones((2, 1)), weights=np.array([0.7, 0.7]))
    d = DataSet(np.arange(4.0)[:, None])
    np.testing.assert_allclose(d.w, 0.25)
    assert d.n == 4 and d.m == 1


def test_csv_header_and_parse_error():
    d = DataSet.from_csv(io.StringIO("a,b\n1,2\n3,4\n"))
    np.testing.assert_array_equal(d.points, [[1, 2], [3, 4]])
    with pytest.raises(DataParseError) as info:
        DataSet.from_csv(io.StringIO("1,2\n3,4\nx,5\n"))
    assert info.value.row == 3 and info.value.column == 1
