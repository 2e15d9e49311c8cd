import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynkin_control.errors import ConfigurationError, ExpressionError
from dynkin_control.expressions import Expression, expression_eval
from dynkin_control.scenario import (build_appendix_model, build_band_curves, build_cost, build_diffusion,
                                     build_grid, dumps, load, loads)

MINIMAL = """
[scenario]
name = tiny

[diffusion]
drift = 0
sigma = 1

[cost]
H = x1

[grid]
lower = -2
upper = 2
counts = 41
"""


# --------------------------------------------------------------------------
# Expressions

def test_expression_examples():
    assert expression_eval("x2 + 0.5*sin(x1)", [math.pi / 2, 1.0]) == 1.5
    assert expression_eval("1", [3.0, -7.0]) == 1.0
    assert expression_eval("exp(-(x1^2))", [0.0]) == 1.0


def test_precedence_and_associativity():
    assert expression_eval("2^3^2", [0.0]) == 512.0
    assert expression_eval("-2^2", [0.0]) == -4.0
    assert expression_eval("8/4/2", [0.0]) == 1.0
    assert expression_eval("1 - 2 - 3", [0.0]) == -4.0
    assert expression_eval("2*pi", [0.0]) == 2 * math.pi
    assert expression_eval("abs(-x1) + tanh(0) + cos(0)", [2.5]) == 3.5


@pytest.mark.parametrize("text, offset", [
    ("x1 + $", 5),
    ("foo(x1)", 0),
    ("1 + y", 4),
    ("sin x1", 0),
    ("sin(x1, x2)", 6),
    ("(1 + 2", 6),
    ("1 2", 2),
    ("x1 + é", 5),
])
def test_parse_errors_carry_byte_offsets(text, offset):
    with pytest.raises(ExpressionError) as info:
        Expression(text)
    assert info.value.offset == offset


def test_variable_range_is_checked():
    with pytest.raises(ExpressionError) as info:
        Expression("x1 + x3", nvars=2)
    assert info.value.offset == 5


def test_division_by_zero_is_reported():
    with pytest.raises(ExpressionError):
        expression_eval("1/(x1 - 1)", [1.0])


def test_non_finite_result_is_reported():
    with pytest.raises(ExpressionError):
        expression_eval("exp(x1)", [1e4])


def test_vectorised_evaluation_and_derivatives():
    e = Expression("x1^2*x2 + sin(x2)", 2)
    pts = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert np.allclose(e(pts), pts[:, 0] ** 2 * pts[:, 1] + np.sin(pts[:, 1]))
    assert np.allclose(e.derivative(2, 0)(pts), 2 * pts[:, 0] * pts[:, 1])
    assert np.allclose(e.derivative(2, 1, 1)(pts), -np.sin(pts[:, 1]))
    assert np.array_equal(Expression("3")(pts), [3.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 5))
def test_arithmetic_matches_python(a, b, c):
    text = f"({a!r}) * x1 + ({b!r}) / ({c!r}) - x1^2"
    assert expression_eval(text, [c]) == pytest.approx(a * c + b / c - c ** 2, rel=1e-12, abs=1e-12)


# --------------------------------------------------------------------------
# Scenario files

@pytest.mark.parametrize("name", ["s1", "s2"])
def test_builtin_round_trip(name):
    s = load(name)
    assert loads(dumps(s)) == s
    assert dumps(loads(dumps(s))) == dumps(s)


def test_minimal_file_takes_defaults():
    s = loads(MINIMAL)
    assert s.cost.f1 == "1" and s.solver.omega == 1.5 and s.seed == 0
    assert loads(dumps(s)) == s


def test_file_loading(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(MINIMAL)
    assert load(path) == loads(MINIMAL)
    with pytest.raises(ConfigurationError):
        load(tmp_path / "missing.ini")


def test_overrides():
    s = load("s1").with_overrides(["grid.counts=201", "solver.omega=1.8", "scenario.seed=9"])
    assert s.grid.counts == (201,) and s.solver.omega == 1.8 and s.seed == 9
    assert s.digest() != load("s1").digest()
    with pytest.raises(ConfigurationError):
        load("s1").with_overrides(["counts=3"])


@pytest.mark.parametrize("override, field", [
    ("diffusion.alpha=0", "diffusion.alpha"),
    ("solver.omega=2.5", "solver.omega"),
    ("solver.hjb_tol=0", "solver.hjb_tol"),
    ("solver.xn_bc=wrap", "solver.xn_bc"),
    ("cost.H=x1 +", "cost.H"),
    ("cost.f1=x2", "cost.f1"),
    ("diffusion.kind=magic", "diffusion.kind"),
    ("diffusion.drift=0, 0", "diffusion.drift"),
    ("game.paths=1", "game.paths"),
    ("control.x0=0, 0", "control.x0"),
    ("appendix.interval=1, -1", "appendix.interval"),
    ("grid.bogus=1", "grid.bogus"),
    ("solver.omega=fast", "solver.omega"),
    ("scenario.seed=-1", "scenario.seed"),
])
def test_validation_names_the_field(override, field):
    with pytest.raises(ConfigurationError) as info:
        load("s1").with_overrides([override])
    assert info.value.field == field


def test_unknown_section_and_missing_section():
    with pytest.raises(ConfigurationError) as info:
        loads(MINIMAL + "\n[extra]\nx = 1\n")
    assert info.value.field == "extra"
    with pytest.raises(ConfigurationError) as info:
        loads(MINIMAL.replace("[grid]", "[solver]").replace("lower = -2\nupper = 2\ncounts = 41\n", ""))
    assert info.value.field == "grid"


def test_malformed_text():
    with pytest.raises(ConfigurationError):
        loads("no sections here")


def test_model_construction_for_s1():
    s = load("s1")
    spec, cost, grid = build_diffusion(s), build_cost(s), build_grid(s)
    assert grid.counts == (801,) and grid.spacing[0] == pytest.approx(0.01)
    x = np.array([[0.3], [-1.2]])
    assert np.array_equal(cost.H(x), [0.3, -1.2])
    assert np.array_equal(cost.f1(x), [1.0, 1.0])
    mu, A = spec.coefficients(x[0])
    assert np.allclose(mu, 0.0) and np.allclose(A, 0.5)


def test_model_construction_for_s2():
    s = load("s2")
    grid = build_grid(s)
    cost = build_cost(s)
    assert grid.periodic == (True, False)
    x = np.array([[math.pi / 2, 1.0]])
    assert cost.H(x)[0] == pytest.approx(1.5)
    assert cost.gradient(1, x, 2)[0] == pytest.approx([0.0, 0.0])
    A, B = build_band_curves(s, grid)
    assert np.all(A == -3.5) and np.all(B == 3.5)


def test_expression_diffusion():
    s = load("s1").with_overrides(["diffusion.kind=expression", "diffusion.drift=-x1", "diffusion.sigma=1 + 0.1*x1^2"])
    spec = build_diffusion(s)
    mu, A = spec.coefficients(np.array([2.0]))
    assert mu[0] == pytest.approx(-2.0) and A[0, 0] == pytest.approx(0.5 * 1.4 ** 2)


def test_appendix_model():
    model = build_appendix_model(load("s1"))
    x = np.linspace(-1, 1, 5)
    assert np.allclose(2 * model.mu(x), model.sigma(x) * model.dsigma(x))
