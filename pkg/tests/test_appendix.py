import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynkin_control.appendix import (Generator, OneDimModel, appendix_table, build_hW_1d, compatibility_residual,
                                     corrected_drift, cosine_bump, dirichlet_pairing_residual, pairing_terms,
                                     refinement_study, scale_speed)
from dynkin_control.errors import DomainError, ParameterError, PreconditionError, QuadratureError
from dynkin_control.grid import GridField, GridSpec


def const(c):
    return lambda x: np.full(np.shape(x), c, dtype=np.float64)


BROWNIAN = OneDimModel(const(0.0), const(1.0), const(0.0))
COMPATIBLE = OneDimModel(lambda x: (x + 2) / 2, lambda x: x + 2, const(1.0))
INCOMPATIBLE = OneDimModel(lambda x: 0.4 * x, const(1.0), const(0.0))


# --------------------------------------------------------------------------
# Scale and speed

def test_brownian_densities():
    s, m = scale_speed(BROWNIAN, np.linspace(-1, 1, 9))
    assert np.all(s == 1.0) and np.all(m == 2.0)


@pytest.mark.parametrize("c", [-0.7, 0.3, 1.5])
def test_constant_drift_densities(c):
    x = np.linspace(-1, 1, 11)
    s, m = scale_speed(OneDimModel(const(c), const(1.0)), x)
    assert np.allclose(s, np.exp(-2 * c * x), rtol=1e-10)
    assert np.allclose(m, 2 * np.exp(2 * c * x), rtol=1e-10)


def test_shifted_base_point():
    # 2μ/σ² = 1/x, so the exponent from base 1 is log x
    model = OneDimModel(lambda x: x / 2, lambda x: x, const(1.0), interval=(1.0, 2.0), base=1.0)
    x = np.linspace(1, 2, 6)
    s, m = scale_speed(model, x)
    assert np.allclose(s, 1 / x, rtol=1e-10)
    assert np.allclose(m, 2 / x, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(0.1, 1.0), st.floats(-0.5, 0.5), st.floats(-1, 1))
def test_density_product_identity(c0, s0, s1, x):
    model = OneDimModel(lambda y: c0 * np.sin(3 * y), lambda y: s0 + 0.5 + s1 * np.tanh(y) * 0.5)
    s, m = scale_speed(model, np.float64(x))
    assert s * m == pytest.approx(2 / model.sigma(np.float64(x)) ** 2, rel=1e-12)


def test_points_outside_the_interval_are_rejected():
    with pytest.raises(DomainError):
        scale_speed(BROWNIAN, np.array([1.5]))


def test_non_integrable_drift_raises():
    model = OneDimModel(lambda x: 1.0 / x, const(1.0))
    with pytest.raises(QuadratureError):
        scale_speed(model, np.array([-0.5, 0.5]))


def test_model_validation():
    with pytest.raises(DomainError):
        OneDimModel(const(0.0), lambda x: np.asarray(x, dtype=float))
    with pytest.raises(ParameterError):
        OneDimModel(const(0.0), const(1.0), alpha=0.0)
    with pytest.raises(ParameterError):
        OneDimModel(const(0.0), const(1.0), interval=(1.0, -1.0))


# --------------------------------------------------------------------------
# Compatibility and corrected drift

def test_compatibility_residuals():
    x = np.linspace(1, 2, 11)
    assert compatibility_residual(OneDimModel(lambda y: y / 2, lambda y: y, const(1.0), interval=(1, 2)), x) == 0.0
    assert compatibility_residual(BROWNIAN, x) == 0.0
    assert compatibility_residual(OneDimModel(const(0.3), const(1.0), const(0.0)), x) == pytest.approx(0.6)


def test_corrected_drift_for_constant_sigma():
    x = np.linspace(-1, 1, 7)
    model = OneDimModel(lambda y: np.sin(y) + y ** 2, const(0.8), const(0.0))
    assert np.array_equal(corrected_drift(model, x), -(np.sin(x) + x ** 2))


def test_corrected_drift_under_compatibility():
    x = np.linspace(-1, 1, 7)
    assert np.allclose(corrected_drift(COMPATIBLE, x), COMPATIBLE.mu(x), atol=1e-15)


def test_corrected_drift_example():
    model = OneDimModel(const(0.0), lambda y: 1 + y ** 2, lambda y: 2 * y)
    assert corrected_drift(model, np.float64(1.0)) == 4.0


def test_numerical_sigma_derivative():
    model = OneDimModel(const(0.0), lambda y: 1 + y ** 2)
    assert corrected_drift(model, np.float64(1.0)) == pytest.approx(4.0, abs=1e-8)


# --------------------------------------------------------------------------
# Pairing

def test_constant_functions_pair_to_zero():
    grid = GridSpec([-1], [1], [41])
    u = GridField.constant(grid, 2.5)
    rep = pairing_terms(INCOMPATIBLE, u, u)
    assert rep.energy == 0.0 and rep.pairing == 0.0 and rep.residual == 0.0


def test_reflecting_condition_is_enforced():
    grid = GridSpec([-1], [1], [41])
    u = GridField(grid, grid.xn.copy())
    with pytest.raises(PreconditionError):
        dirichlet_pairing_residual(BROWNIAN, u, cosine_bump(grid, 1))


def test_compatible_model_pairs_at_second_order():
    h, res, orders = refinement_study(COMPATIBLE, [51, 101, 201, 401], Generator.L)
    assert np.all(orders >= 1.9)
    assert res[-1] < 1e-4


def test_incompatible_model_stalls_with_original_generator():
    _, res_l, _ = refinement_study(INCOMPATIBLE, [51, 101, 201, 401], Generator.L)
    _, res_g, orders = refinement_study(INCOMPATIBLE, [51, 101, 201, 401], Generator.L_GAMMA)
    assert res_l[-1] > 0.5 * res_l[0] and res_l[-1] > 1e-2
    assert np.all(orders >= 1.9)


# --------------------------------------------------------------------------
# One-dimensional h and W

def test_trivial_h_and_w():
    grid = GridSpec([-1], [1], [21])
    zero = GridField.constant(grid, 0.0)
    model = OneDimModel(const(0.0), const(1.0), alpha=2.0)
    h, W = build_hW_1d(model, zero, zero, -0.3, C=0.8)
    assert np.all(h.values == 0.8) and np.all(W.values == 0.4)


def test_w_derivative_is_weighted_value():
    errs = []
    for n in (101, 201):
        grid = GridSpec([-1], [1], [n])
        V = GridField(grid, np.sin(2 * grid.xn))
        _, W = build_hW_1d(COMPATIBLE, V, GridField.constant(grid, 0.0), -0.4)
        s, _ = scale_speed(COMPATIBLE, grid.xn)
        dW = (W.values[2:] - W.values[:-2]) / (2 * grid.spacing[0])
        errs.append(np.max(np.abs(dW - V.values[1:-1] * s[1:-1])))
    assert errs[0] / errs[1] > 3.5


def test_boundary_point_must_be_on_grid():
    grid = GridSpec([-1], [1], [21])
    zero = GridField.constant(grid, 0.0)
    with pytest.raises(DomainError):
        build_hW_1d(BROWNIAN, zero, zero, 1.5)


def test_table_columns():
    grid = GridSpec([-1], [1], [5])
    tab = appendix_table(INCOMPATIBLE, grid)
    assert set(tab) == {"x", "s_dot", "m_dot", "gamma", "compat"}
    assert np.allclose(tab["compat"], 0.8 * np.abs(grid.xn))
