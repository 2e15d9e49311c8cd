import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynkin_control.diffusion import (DiffusionSpec, apply_generator, check_nondegenerate, density_residual,
                                      generator_field)
from dynkin_control.errors import DataError, DomainError, StencilError
from dynkin_control.grid import GridField, GridSpec


def field(grid, fn):
    return GridField.from_function(grid, lambda p: fn(*np.moveaxis(p, -1, 0)))


def test_constant_field_has_zero_generator():
    spec = DiffusionSpec.constant([0.3, -1.2], [[1.0, 0.2], [0.1, 0.7]], 1.0)
    grid = GridSpec([0, 0], [1, 1], [7, 9])
    u = GridField.constant(grid, 4.2)
    assert apply_generator(spec, u, (3, 4)) == 0.0


def test_quadratic_in_one_dimension_is_exact():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    grid = GridSpec([-1], [1], [21])
    u = field(grid, lambda x: x ** 2)
    assert apply_generator(spec, u, (7,)) == pytest.approx(1.0, abs=1e-12)


def test_bilinear_with_lateral_drift():
    spec = DiffusionSpec.constant([1.0, 0.0], np.eye(2), 1.0)
    grid = GridSpec([-1, -2], [1, 2], [11, 21])
    u = field(grid, lambda x1, x2: x1 * x2)
    node = (3, 14)
    x2 = grid.axis(1)[node[1]]
    assert apply_generator(spec, u, node) == pytest.approx(x2, abs=1e-12)


def test_cross_term_uses_off_diagonal_diffusion():
    sigma = np.array([[1.0, 0.0], [0.6, 0.8]])
    spec = DiffusionSpec.constant([0.0, 0.0], sigma, 1.0)
    A = 0.5 * sigma @ sigma.T
    grid = GridSpec([-1, -1], [1, 1], [9, 9])
    u = field(grid, lambda x1, x2: x1 * x2)
    assert apply_generator(spec, u, (4, 4)) == pytest.approx(2 * A[0, 1], abs=1e-12)


def test_pinned_edge_has_no_stencil():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    grid = GridSpec([-1], [1], [11])
    with pytest.raises(StencilError):
        apply_generator(spec, GridField.constant(grid, 1.0), (0,))


def test_non_finite_value_is_reported():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    grid = GridSpec([-1], [1], [11])
    values = np.ones(11)
    values[5] = np.nan
    with pytest.raises(DataError):
        apply_generator(spec, GridField(grid, values), (4,))


def test_field_form_matches_pointwise_form():
    spec = DiffusionSpec(2, lambda x: np.stack([np.sin(x[..., 1]), x[..., 0]], -1),
                         lambda x: np.stack([np.stack([1 + 0.2 * np.cos(x[..., 0]), 0 * x[..., 0]], -1),
                                             np.stack([0.3 + 0 * x[..., 0], np.ones_like(x[..., 0])], -1)],
                                            -2),
                         1.0)
    grid = GridSpec([-np.pi, -1], [np.pi, 1], [13, 11], ("periodic",))
    u = field(grid, lambda x1, x2: np.cos(x1) * x2 ** 3)
    full = generator_field(spec, u)
    for node in [(0, 3), (5, 5), (12, 9), (7, 1)]:
        assert full[node] == pytest.approx(apply_generator(spec, u, node), abs=1e-11)


# --------------------------------------------------------------------------
# Properties

coef = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(coef, min_size=6, max_size=6), st.lists(coef, min_size=2, max_size=2),
       st.lists(coef, min_size=4, max_size=4))
def test_quadratics_are_exact(c, mu, s):
    sigma = np.array([[1.0 + abs(s[0]), 0.0], [s[1], 1.0 + abs(s[2])]])
    spec = DiffusionSpec.constant(mu, sigma, 1.0)
    A = 0.5 * sigma @ sigma.T
    grid = GridSpec([-1, -1], [1, 1], [9, 9])
    u = field(grid, lambda x, y: c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y)
    node = (3, 5)
    x, y = grid.axis(0)[3], grid.axis(1)[5]
    exact = (mu[0] * (c[1] + 2 * c[3] * x + c[4] * y) + mu[1] * (c[2] + c[4] * x + 2 * c[5] * y)
             + A[0, 0] * 2 * c[3] + 2 * A[0, 1] * c[4] + A[1, 1] * 2 * c[5])
    assert apply_generator(spec, u, node) == pytest.approx(exact, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(coef, coef, st.integers(0, 2 ** 31))
def test_generator_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    spec = DiffusionSpec.constant([0.4, -0.1], [[1.0, 0.0], [0.5, 1.0]], 1.0)
    grid = GridSpec([0, 0], [1, 1], [6, 7])
    u = GridField(grid, rng.normal(size=grid.shape))
    v = GridField(grid, rng.normal(size=grid.shape))
    w = GridField(grid, a * u.values + b * v.values)
    node = (2, 3)
    lhs = apply_generator(spec, w, node)
    rhs = a * apply_generator(spec, u, node) + b * apply_generator(spec, v, node)
    scale = 1.0 + np.abs(u.values).max() * 1e3 + np.abs(v.values).max() * 1e3
    assert abs(lhs - rhs) <= 1e-12 * scale


# --------------------------------------------------------------------------
# Density condition

def test_density_one_for_driftless_constant_diffusion():
    spec = DiffusionSpec.constant([0.0, 0.0], [[1.0, 0.0], [0.3, 0.9]], 1.0)
    grid = GridSpec([0, 0], [1, 1], [7, 7])
    r = density_residual(spec, GridField.constant(grid, 1.0), (3, 3))
    assert np.all(r == 0.0)


def _exp_density_residual(n):
    mu = np.array([0.5, -0.3])
    sigma = np.array([[1.0, 0.0], [0.4, 0.8]])
    spec = DiffusionSpec.constant(mu, sigma, 1.0)
    A = 0.5 * sigma @ sigma.T
    k = np.linalg.solve(A, mu)
    grid = GridSpec([-1, -1], [1, 1], [n, n])
    rho = field(grid, lambda x, y: np.exp(k[0] * x + k[1] * y))
    node = ((n - 1) // 4, (n - 1) // 2)   # the point (-0.5, 0) on every grid
    return np.max(np.abs(density_residual(spec, rho, node)))


def test_density_closed_form_converges_at_second_order():
    errs = [_exp_density_residual(n) for n in (9, 17, 33, 65)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] < 1e-3
    assert np.all(orders >= 1.9)


def test_density_for_linear_drift():
    spec = DiffusionSpec(1, lambda x: x.copy(), lambda x: np.ones(x.shape[:-1] + (1, 1)), 1.0)
    errs = []
    for n in (41, 81, 161):
        grid = GridSpec([-1], [1], [n])
        rho = field(grid, lambda x: np.exp(x ** 2))
        errs.append(abs(density_residual(spec, rho, ((3 * (n - 1)) // 4,))[0]))
    assert errs[-1] < 1e-3
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_density_must_be_positive():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    grid = GridSpec([0], [1], [5])
    with pytest.raises(DomainError):
        density_residual(spec, GridField(grid, np.array([1.0, 1.0, -1.0, 1.0, 1.0])), (2,))


# --------------------------------------------------------------------------
# Ellipticity

def test_identity_diffusion_eigenvalue():
    spec = DiffusionSpec.constant([0, 0], np.eye(2), 1.0)
    rep = check_nondegenerate(spec, GridSpec([0, 0], [1, 1], [3, 3]))
    assert rep.min_eigenvalue == pytest.approx(0.5) and rep.passed


def test_degenerate_diffusion_fails():
    spec = DiffusionSpec.constant([0, 0], np.diag([1.0, 0.0]), 1.0)
    rep = check_nondegenerate(spec, GridSpec([0, 0], [1, 1], [3, 3]))
    assert rep.min_eigenvalue == pytest.approx(0.0, abs=1e-15) and not rep.passed


def test_oscillating_diffusion_minimum():
    def sigma(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0 + 0.5 * np.sin(x[..., 0])
        return out

    spec = DiffusionSpec(2, lambda x: np.zeros_like(x), sigma, 1.0)
    # -pi/2 is a node of this grid, where the minimum 0.5 * 0.5^2 is attained
    rep = check_nondegenerate(spec, GridSpec([-np.pi, -1], [np.pi, 1], [65, 5], ("periodic",)))
    assert rep.min_eigenvalue == pytest.approx(0.125, abs=1e-12)


def test_alpha_must_be_positive():
    with pytest.raises(DomainError):
        DiffusionSpec.constant([0.0], 1.0, 0.0)
