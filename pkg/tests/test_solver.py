import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wproj import (CostModel, DataSet, SolverOptions, compute_wp_statistic, make_linear_model,
                   make_quadratic_norm_model, make_zero_power_model, solve_inner_transport,
                   wp_closed_form_linear, wp_closed_form_quadratic)
from wproj.errors import InfeasibleOracle, UnboundedInner

I1 = CostModel.identity(1)


def data1(*xs, weights=None):
    return DataSet(np.asarray(xs, dtype=float)[:, None], weights=weights)


class TestInner:
    def test_linear(self):
        x, v = solve_inner_transport(np.array([2.0]), np.array([0.0]), make_linear_model(1), I1)
        assert x[0] == pytest.approx(1.0)
        assert v == pytest.approx(1.0)

    def test_zero_dual(self):
        xi = np.array([0.3, -1.2])
        x, v = solve_inner_transport(np.zeros(2), xi, make_linear_model(2), CostModel.identity(2))
        np.testing.assert_array_equal(x, xi)
        assert v == 0.0

    def test_quadratic_hand_solution(self):
        x, v = solve_inner_transport(np.array([0.5]), np.array([1.0]), make_quadratic_norm_model(1), I1)
        assert x[0] == pytest.approx(2.0, abs=1e-9)
        assert v == pytest.approx(0.5, abs=1e-9)

    def test_unbounded(self):
        with pytest.raises(UnboundedInner):
            solve_inner_transport(np.array([2.0]), np.array([0.5]), make_quadratic_norm_model(1), I1)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-3, 0.9), st.floats(-3, 3))
    def test_stationarity_and_improvement(self, z, xi):
        mod = make_quadratic_norm_model(1)
        x, v = solve_inner_transport(np.array([z]), np.array([xi]), mod, I1)
        resid = 2 * (x[0] - xi) - 2 * x[0] * z
        assert abs(resid) <= 1e-8 * (1 + abs(x[0]))
        assert v >= z * (xi ** 2 - 1) - 1e-12


class TestStatistic:
    def test_linear_example(self):
        r = compute_wp_statistic(data1(1, 3), make_linear_model(1), I1)
        assert r.stat == pytest.approx(8.0, abs=1e-6)
        assert r.converged

    def test_balanced(self):
        assert compute_wp_statistic(data1(1, -1), make_linear_model(1), I1).stat == pytest.approx(0, abs=1e-12)

    def test_quadratic_example(self):
        r = compute_wp_statistic(data1(2, 0), make_quadratic_norm_model(1), I1)
        assert r.stat == pytest.approx(2 * (math.sqrt(2) - 1) ** 2, abs=1e-6)

    def test_quadratic_second_example(self):
        # closed form 2 (sqrt(1.25) - 1)^2
        r = compute_wp_statistic(data1(1.5, 0.5), make_quadratic_norm_model(1), I1)
        assert r.stat == pytest.approx(2 * (math.sqrt(1.25) - 1) ** 2, rel=1e-7)

    def test_single_atom(self):
        # moving the atom at 3 to the zero set {|x| = 1} costs 4
        r = compute_wp_statistic(data1(3.0), make_quadratic_norm_model(1), I1)
        assert r.stat == pytest.approx(4.0, rel=1e-6)

    def test_zeta_rescaling_and_shapes(self):
        d = data1(1, 3, 2, 5)
        r = compute_wp_statistic(d, make_linear_model(1), I1)
        assert r.transported.shape == (4, 1)
        # linear h: zeta = -2 Sigma^{-1} mean(X) in the unscaled convention
        assert r.zeta_star[0] == pytest.approx(-2 * 2.75 * 2, rel=1e-8)
        np.testing.assert_allclose(r.h_bar, [11 / 2])

    def test_two_dim_sigma(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        X = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        d = DataSet(X)
        r = compute_wp_statistic(d, make_linear_model(2), CostModel(S))
        assert r.stat == pytest.approx(wp_closed_form_linear(d, CostModel(S)), rel=1e-9)

    def test_hull_warning(self):
        r = compute_wp_statistic(data1(1, 3), make_linear_model(1), I1)
        assert r.hull_warning

    @pytest.mark.parametrize("k", [1, 2])
    def test_zero_power_two_atom(self, k):
        mod = make_zero_power_model(0.01, k + 2)
        geo = mod.params["geometry"]
        r = compute_wp_statistic(data1(0.0, geo.centers[k]), mod, I1, SolverOptions(multistart_grid=2001))
        assert r.r_value >= 0.9


class TestOracles:
    def test_linear_oracle_values(self):
        assert wp_closed_form_linear(data1(1, 3), I1) == pytest.approx(8.0)
        assert wp_closed_form_linear(data1(0, 0, 0), CostModel(np.array([[3.0]]))) == 0.0
        d = DataSet(np.eye(2))
        assert wp_closed_form_linear(d, CostModel.identity(2)) == pytest.approx(1.0)

    def test_quadratic_oracle_values(self):
        assert wp_closed_form_quadratic(data1(2, 0)) == pytest.approx(2 * (math.sqrt(2) - 1) ** 2)
        assert wp_closed_form_quadratic(data1(math.sqrt(2), 0)) == pytest.approx(0.0, abs=1e-15)
        assert wp_closed_form_quadratic(data1(1.5, 0.5)) == pytest.approx(0.027864, abs=1e-6)

    def test_quadratic_oracle_infeasible(self):
        with pytest.raises(InfeasibleOracle):
            wp_closed_form_quadratic(data1(0.1, 0.2), c=-1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(0, 2 ** 31))
def test_statistic_invariants(m, n, seed):
    rng = np.random.default_rng(seed)
    d = DataSet(rng.normal(size=(n, m)) + 0.3)
    r = compute_wp_statistic(d, make_quadratic_norm_model(m, float(m)), CostModel.identity(m))
    assert r.stat >= -1e-10
    assert r.stat == pytest.approx(n * r.r_value, rel=1e-12, abs=1e-300)
    # every recorded dual value is a lower bound on the optimum
    assert all(g <= r.r_value + 1e-12 * (1 + abs(r.r_value)) for g in r.dual_trace)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2 ** 31))
def test_duplication_invariance(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) * 0.8
    mod, cost = make_quadratic_norm_model(2), CostModel.identity(2)
    r1 = compute_wp_statistic(DataSet(X), mod, cost)
    r2 = compute_wp_statistic(DataSet(np.vstack([X, X])), mod, cost)
    assert r2.r_value == pytest.approx(r1.r_value, rel=1e-7, abs=1e-12)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(outer_tol=0)
    with pytest.raises(ValueError):
        SolverOptions(inner_damping=1.5)
    with pytest.raises(ValueError):
        SolverOptions(outer_max_iter=0)
