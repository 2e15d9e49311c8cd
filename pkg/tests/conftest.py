import numpy as np
import pytest

from dynkin_control.control import build_h
from dynkin_control.free_boundary import analytic_ab, extract_boundaries
from dynkin_control.scenario import build_band_curves, build_cost, build_diffusion, build_grid, load
from dynkin_control.vi_solver import ObstacleProblem, solve_two_obstacle


class Solved:
    """A scenario solved through W, shared by the tests of one session."""

    def __init__(self, name):
        self.scenario = load(name)
        self.spec = build_diffusion(self.scenario)
        self.cost = build_cost(self.scenario)
        self.grid = build_grid(self.scenario)
        self.problem = ObstacleProblem.from_cost(self.spec, self.grid, self.cost)
        self.solution = solve_two_obstacle(self.problem)
        self.fb = extract_boundaries(self.solution, self.problem)
        A, B = build_band_curves(self.scenario, self.grid)
        self.curves = analytic_ab(self.problem, A, B)
        self.vw = build_h(self.solution.V, self.problem.H, self.fb, self.spec, self.solution.xn_bc,
                          labels=self.solution.labels)


@pytest.fixture(scope="session")
def s1():
    return Solved("s1")


@pytest.fixture(scope="session")
def s2():
    return Solved("s2")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# Acceptance summary: one line per criterion at the end of the session

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary, then assert."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        assert passed, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
