import numpy as np
import pytest

import oracles
from dynkin_control.diffusion import DiffusionSpec
from dynkin_control.errors import AssumptionViolation, TopologyError
from dynkin_control.free_boundary import (ComparisonCurves, FreeBoundary, analytic_ab, connectivity_check,
                                          extract_boundaries, lipschitz_estimate, ordering_check,
                                          smooth_fit_gap)
from dynkin_control.grid import GridField, GridSpec
from dynkin_control.vi_solver import CostSpec, ObstacleProblem, ObstacleSolution, Region, solve_two_obstacle

E1, E, E2 = Region.E1, Region.E, Region.E2


def s2_solution(counts):
    spec = DiffusionSpec.constant([0.0, 0.0], np.eye(2), 1.0)
    cost = CostSpec.constant_obstacles(lambda x: x[..., 1] + 0.5 * np.sin(x[..., 0]))
    grid = GridSpec([-np.pi, -4], [np.pi, 4], counts, ("periodic",))
    p = ObstacleProblem.from_cost(spec, grid, cost)
    sol = solve_two_obstacle(p, omega=1.9, max_iter=10 ** 6)
    return p, sol, extract_boundaries(sol, p)


@pytest.fixture(scope="module")
def s2_fine():
    return s2_solution((129, 321))


# --------------------------------------------------------------------------
# Extraction

def test_flat_value_puts_boundaries_on_pinned_rows():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    grid = GridSpec([-1], [1], [11])
    p = ObstacleProblem.from_cost(spec, grid, CostSpec.constant_obstacles(lambda x: np.zeros(x.shape[:-1])))
    V = np.zeros(11)
    V[0], V[-1] = -1.0, 1.0
    labels = np.full(11, E, dtype=np.int8)
    labels[0], labels[-1] = E1, E2
    fb = extract_boundaries(ObstacleSolution(GridField(grid, V), labels, 0, 0.0), p)
    assert float(fb.a_tilde) == -1.0 and float(fb.b_tilde) == 1.0


def test_s1_boundaries_are_symmetric_and_match_closed_form(s1):
    h = s1.grid.spacing[0]
    b = oracles.s1_boundary()
    assert abs(float(s1.fb.a_tilde) + float(s1.fb.b_tilde)) <= 2 * h
    assert abs(float(s1.fb.b_tilde) - b) <= 2 * h
    assert abs(float(s1.fb.a_tilde) + b) <= 2 * h


def test_s1_boundaries_converge():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    cost = CostSpec.constant_obstacles(lambda x: x[..., 0])
    out = []
    for n in (401, 801):
        p = ObstacleProblem.from_cost(spec, GridSpec([-4], [4], [n]), cost)
        sol = solve_two_obstacle(p)
        out.append(extract_boundaries(sol, p))
    assert abs(float(out[0].a_tilde - out[1].a_tilde)) <= 2 * 8 / 400
    assert abs(float(out[0].b_tilde - out[1].b_tilde)) <= 2 * 8 / 400


def test_s2_lower_boundary_is_bracketed(s2):
    a = -1 - 0.5 * np.sin(s2.grid.axis(0))
    h = s2.grid.spacing[-1]
    assert np.all(s2.fb.a_tilde <= a + 2 * h)
    assert np.all(s2.fb.a_tilde >= s2.curves.A_band - 2 * h)


def test_s2_boundaries_converge(s2, s2_fine):
    _, _, fine = s2_fine
    h = s2.grid.spacing[-1]
    assert np.max(np.abs(s2.fb.a_tilde - fine.a_tilde[::2])) <= 2 * h
    assert np.max(np.abs(s2.fb.b_tilde - fine.b_tilde[::2])) <= 2 * h


def test_broken_column_is_named():
    spec = DiffusionSpec.constant([0.0, 0.0], np.eye(2), 1.0)
    grid = GridSpec([0, 0], [1, 1], [4, 7])
    p = ObstacleProblem.from_cost(spec, grid, CostSpec.constant_obstacles(lambda x: np.zeros(x.shape[:-1])))
    labels = np.tile(np.array([E1, E, E, E, E, E, E2], dtype=np.int8), (4, 1))
    labels[2, 4] = E1
    V = np.where(labels == E1, -1.0, np.where(labels == E2, 1.0, 0.0))
    with pytest.raises(TopologyError) as info:
        extract_boundaries(ObstacleSolution(GridField(grid, V), labels, 0, 0.0), p)
    assert info.value.column == (2,)


# --------------------------------------------------------------------------
# Analytic comparison curves

def test_s1_comparison_curves(s1):
    cc = analytic_ab(s1.problem)
    assert abs(float(cc.a) + 1.0) <= 1e-10
    assert abs(float(cc.b) - 1.0) <= 1e-10


def test_s2_comparison_curves(s2):
    x1 = s2.grid.axis(0)
    assert np.max(np.abs(s2.curves.a - (-1 - 0.5 * np.sin(x1)))) <= 1e-10
    assert np.max(np.abs(s2.curves.b - (1 - 0.5 * np.sin(x1)))) <= 1e-10


def test_exponential_lower_obstacle():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    cost = CostSpec(lambda x: x[..., 0], lambda x: 1.0 + np.exp(x[..., 0]), lambda x: np.ones(x.shape[:-1]),
                    lambda x: np.exp(x), lambda x: np.zeros(x.shape),
                    lambda x: np.exp(x)[..., None], lambda x: np.zeros(x.shape + (1,)))
    p = ObstacleProblem.from_cost(spec, GridSpec([-4], [4], [81]), cost)
    cc = analytic_ab(p)
    assert float(cc.a) == pytest.approx(oracles.exp_obstacle_root(), abs=1e-10)
    assert float(cc.b) == pytest.approx(1.0, abs=1e-10)


def test_missing_sign_change_is_an_assumption_violation():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    cost = CostSpec.constant_obstacles(lambda x: x[..., 0] + 10.0)
    p = ObstacleProblem.from_cost(spec, GridSpec([-4], [4], [81]), cost)
    with pytest.raises(AssumptionViolation):
        analytic_ab(p)


def test_non_monotone_source_is_an_assumption_violation():
    spec = DiffusionSpec.constant([0.0], 1.0, 1.0)
    cost = CostSpec.constant_obstacles(lambda x: np.sin(3 * x[..., 0]))
    p = ObstacleProblem.from_cost(spec, GridSpec([-4], [4], [81]), cost)
    with pytest.raises(AssumptionViolation):
        analytic_ab(p)


# --------------------------------------------------------------------------
# Ordering

def test_s1_ordering(s1):
    assert ordering_check(s1.fb, s1.curves).passed


def test_s2_ordering(s2):
    assert ordering_check(s2.fb, s2.curves).passed


def test_injected_violation_reports_column(s2):
    bad = FreeBoundary(s2.grid, s2.curves.a + 1.0, np.maximum(s2.fb.b_tilde, s2.curves.a + 1.5))
    rep = ordering_check(bad, s2.curves)
    assert not rep.passed
    cols = {c for c, rel, _ in rep.failures if rel == "a_tilde <= a"}
    assert cols == {(k,) for k in range(s2.grid.counts[0])}


def test_injected_violation_in_one_dimension(s1):
    bad = FreeBoundary(s1.grid, float(s1.curves.a) + 1.0, s1.fb.b_tilde)
    rep = ordering_check(bad, s1.curves)
    assert [(c, r) for c, r, _ in rep.failures] == [((0,), "a_tilde <= a")]


def test_band_must_enclose_curves():
    with pytest.raises(AssumptionViolation):
        ComparisonCurves(-1.0, 1.0, -0.5, 2.0)


# --------------------------------------------------------------------------
# Regularity and topology

def test_lipschitz_of_constant_curve():
    assert lipschitz_estimate(np.full(10, 3.0), 0.1) == (0.0, False)


def test_lipschitz_of_sine():
    x = np.arange(-np.pi, np.pi + 1e-12, np.pi / 64)
    value, warn = lipschitz_estimate(-1 - 0.5 * np.sin(x), np.pi / 64)
    assert not warn and value == pytest.approx(0.5, rel=0.01)


def test_lipschitz_of_single_column():
    assert lipschitz_estimate(np.array([1.0]), 0.1) == (0.0, True)


def test_s2_lipschitz_is_stable(s2, s2_fine):
    p, _, fine = s2_fine
    coarse, _ = lipschitz_estimate(s2.fb.a_tilde, s2.grid.spacing[0])
    refined, _ = lipschitz_estimate(fine.a_tilde, p.grid.spacing[0])
    assert np.isfinite(coarse) and abs(refined / coarse - 1) <= 0.2


def test_three_bands_are_connected():
    labels = np.tile(np.array([E1, E1, E, E, E, E2], dtype=np.int8), (5, 1))
    assert connectivity_check(labels).passed


def test_island_fails_connectivity():
    labels = np.tile(np.array([E1, E1, E, E, E, E, E2], dtype=np.int8), (6, 1))
    labels[3, 3] = E2
    rep = connectivity_check(labels)
    assert not rep.passed and rep.components["E2"] == 2


def test_periodic_wrap_joins_components():
    labels = np.tile(np.array([E1, E, E, E2], dtype=np.int8), (5, 1))
    labels[1:4, 1:3] = E1
    labels[1:4, 3] = E2
    labels[2, :] = [E1, E1, E2, E2]
    rep = connectivity_check(labels, periodic=(True, False))
    assert rep.components["E"] == 1


def test_s1_and_s2_labels_are_connected(s1, s2):
    assert connectivity_check(s1.solution.labels).passed
    assert connectivity_check(s2.solution.labels, s2.grid.periodic).passed


def test_smooth_fit_gap_is_small(s1):
    low, high = smooth_fit_gap(s1.solution, s1.problem, s1.fb)
    h = s1.grid.spacing[0]
    assert float(low) <= oracles.s1_curvature_at_boundary() * h
    assert float(high) == pytest.approx(float(low), abs=1e-9)
