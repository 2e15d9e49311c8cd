"""Free boundaries of the continuation region and their diagnostics."""
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import bisect

from .errors import AssumptionViolation, ConfigurationError, TopologyError
from .grid import GridSpec, as_column_array
from .vi_solver import ObstacleProblem, ObstacleSolution, Region


@dataclass
class FreeBoundary:
    """Per-column heights of the lower (ã) and upper (b̃) free boundary."""

    grid: GridSpec
    a_tilde: np.ndarray
    b_tilde: np.ndarray

    def __post_init__(self):
        self.a_tilde = as_column_array(self.grid, self.a_tilde)
        self.b_tilde = as_column_array(self.grid, self.b_tilde)
        lo, hi = self.grid.lower[-1], self.grid.upper[-1]
        if np.any(self.a_tilde >= self.b_tilde):
            raise TopologyError("lower boundary must lie below the upper boundary")
        if np.any(self.a_tilde < lo) or np.any(self.b_tilde > hi):
            raise TopologyError("free boundary leaves the x_n range of the grid")

    @property
    def xbar_nodes(self):
        return self.grid.column_points()


@dataclass
class ComparisonCurves:
    """Analytic curves ``a``, ``b`` and the configured outer bands ``A``, ``B``."""

    a: np.ndarray
    b: np.ndarray
    A_band: np.ndarray
    B_band: np.ndarray

    def __post_init__(self):
        self.a, self.b, self.A_band, self.B_band = np.broadcast_arrays(
            *(np.asarray(v, dtype=np.float64) for v in (self.a, self.b, self.A_band, self.B_band)))
        self.a, self.b, self.A_band, self.B_band = (np.array(v) for v in (self.a, self.b, self.A_band, self.B_band))
        if not (np.all(self.A_band < self.a) and np.all(self.a < self.b) and np.all(self.b < self.B_band)):
            raise AssumptionViolation("comparison curves must satisfy A < a < b < B in every column")


# --------------------------------------------------------------------------
# Extraction

def _lower_crossing(y, gap, last_stop):
    """Height where an obstacle gap that opens quadratically first vanishes.

    Smooth fit makes the gap behave like ``c (y - ã)²`` next to the boundary,
    so ã is the vertex of the parabola through the first three continuation
    nodes. The discrete contact set may overshoot the true boundary by one
    node, so the vertex may fall in the cell below the last contact node.
    Without upward curvature the last contact node itself is returned.
    """
    j = last_stop
    if j + 3 >= len(y) or gap[j + 1] <= 0:
        return float(y[j])
    h = y[1] - y[0]
    g0, g1, g2 = gap[j + 1:j + 4]
    curv = (g2 - 2.0 * g1 + g0) / (2.0 * h * h)
    if curv <= 0:
        return float(y[j])
    slope = (-3.0 * g0 + 4.0 * g1 - g2) / (2.0 * h)
    vertex = y[j + 1] - slope / (2.0 * curv)
    return float(np.clip(vertex, y[max(j - 1, 0)], y[j + 1]))


def column_bounds(y, labels, gap_low, gap_high, column=None):
    """``(ã, b̃)`` for one column with labels ``E1…E…E2`` from the bottom."""
    if np.any(np.diff(labels) < 0):
        raise TopologyError("labels are not ordered E1 | E | E2", column=column)
    low = np.flatnonzero(labels == Region.E1)
    high = np.flatnonzero(labels == Region.E2)
    n = len(y)
    a = _lower_crossing(y, gap_low, _last_contact(gap_low, low)) if len(low) else y[0]
    if len(high):
        rev = _last_contact(gap_high[::-1], n - 1 - high[::-1])
        b = y[0] + y[-1] - _lower_crossing(y[0] + y[-1] - y[::-1], gap_high[::-1], rev)
    else:
        b = y[-1]
    return a, b


def _last_contact(gap, block, eps=1e-13):
    """Last node of a stopping block where the obstacle is actually attained.

    Labels use a tolerance, so the block may end with continuation nodes
    whose gap is tiny but positive; those carry the sub-grid information.
    """
    touching = block[gap[block] <= eps]
    return int(touching[-1]) if len(touching) else int(block[-1])


def extract_boundaries(solution: ObstacleSolution, problem: ObstacleProblem) -> FreeBoundary:
    """Locate ã and b̃ in every x̄ column.

    Raises
    ------
    TopologyError
        A column's labels are not an ``E1`` block, then ``E``, then ``E2``.
    """
    grid = problem.grid
    y = grid.xn
    V = solution.V.values
    gap_low = V + problem.f1.values
    gap_high = problem.f2.values - V
    labels = solution.labels
    a = np.empty(grid.column_shape)
    b = np.empty(grid.column_shape)
    for col in np.ndindex(*grid.column_shape):
        a[col], b[col] = column_bounds(y, labels[col], gap_low[col], gap_high[col],
                                       column=col if col else None)
    return FreeBoundary(grid, a, b)


def smooth_fit_gap(solution: ObstacleSolution, problem: ObstacleProblem, fb: FreeBoundary):
    """Slope mismatch ``|∂_n(V + f1)|`` at ã and ``|∂_n(f2 − V)|`` at b̃ per column.

    Both derivatives are central differences on the grid, read off at the
    boundary height by linear interpolation. Smooth fit makes them O(h).
    """
    grid = problem.grid
    y = grid.xn
    h = grid.spacing[-1]
    d_low = np.gradient(solution.V.values + problem.f1.values, h, axis=-1)
    d_high = np.gradient(problem.f2.values - solution.V.values, h, axis=-1)
    low = np.empty(grid.column_shape)
    high = np.empty(grid.column_shape)
    for col in np.ndindex(*grid.column_shape):
        low[col] = abs(np.interp(fb.a_tilde[col], y, d_low[col]))
        high[col] = abs(np.interp(fb.b_tilde[col], y, d_high[col]))
    return low, high


# --------------------------------------------------------------------------
# Analytic comparison curves

def _column_root(fn, y, increasing, column, name, tol_root):
    g = fn(y)
    if not np.all(np.isfinite(g)):
        raise AssumptionViolation(f"{name}: comparison function is not finite (column {column})")
    d = np.diff(g)
    if increasing and np.any(d <= 0) or not increasing and np.any(d >= 0):
        raise AssumptionViolation(f"{name}: comparison function is not strictly monotone in x_n "
                                  f"(column {column})")
    if np.sign(g[0]) == np.sign(g[-1]) or g[0] == 0 and g[-1] == 0:
        raise AssumptionViolation(f"{name}: comparison function does not change sign (column {column})")
    zero = np.flatnonzero(g == 0)
    if len(zero):
        return float(y[zero[0]])
    k = int(np.flatnonzero(np.sign(g[:-1]) != np.sign(g[1:]))[0])
    return bisect(lambda t: float(fn(np.array([t]))[0]), y[k], y[k + 1], xtol=tol_root,
                  maxiter=400)


def analytic_ab(problem: ObstacleProblem, A_band=None, B_band=None, tol_root=1e-12) -> ComparisonCurves:
    """Roots of ``(α−ℒ)f1 + H`` (curve a) and ``(α−ℒ)f2 − H`` (curve b) per column.

    ``ℒf`` is evaluated from the obstacle derivatives in ``problem.cost``,
    not from the grid, so the roots are exact up to ``tol_root``. Bands
    default to the x_n edges of the grid.

    Raises
    ------
    AssumptionViolation
        No sign change in a column, or non-monotone samples.
    """
    if problem.cost is None:
        raise ConfigurationError("analytic curves need the cost callables", field="cost")
    spec, grid, cost = problem.spec, problem.grid, problem.cost
    y = grid.xn
    alpha = spec.alpha
    a = np.empty(grid.column_shape)
    b = np.empty(grid.column_shape)
    xbar = grid.column_points()
    for col in np.ndindex(*grid.column_shape):
        base = xbar[col] if grid.ndim > 1 else np.zeros(0)

        def pts(t, base=base):
            t = np.atleast_1d(t)
            return np.column_stack([np.broadcast_to(base, (len(t), grid.ndim - 1)), t])

        def g1(t):
            p = pts(t)
            return alpha * cost.f1(p) - cost.generator_of_obstacle(spec, 1, p) + cost.H(p)

        def g2(t):
            p = pts(t)
            return alpha * cost.f2(p) - cost.generator_of_obstacle(spec, 2, p) - cost.H(p)

        label = col if col else None
        a[col] = _column_root(g1, y, True, label, "a", tol_root)
        b[col] = _column_root(g2, y, False, label, "b", tol_root)
    A = grid.lower[-1] if A_band is None else A_band
    B = grid.upper[-1] if B_band is None else B_band
    return ComparisonCurves(a, b, as_column_array(grid, A), as_column_array(grid, B))


# --------------------------------------------------------------------------
# Diagnostics

@dataclass
class OrderingReport:
    slack: float
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def to_dict(self):
        return {"passed": self.passed, "slack": self.slack,
                "failures": [{"column": list(c), "relation": r, "excess": e} for c, r, e in self.failures]}


def ordering_check(fb: FreeBoundary, cc: ComparisonCurves, slack=None) -> OrderingReport:
    """Check ``A ≤ ã ≤ a`` and ``b ≤ b̃ ≤ B`` columnwise, with ``2h`` slack by default."""
    if slack is None:
        slack = 2.0 * fb.grid.spacing[-1]
    report = OrderingReport(float(slack))
    relations = (("A_band <= a_tilde", cc.A_band, fb.a_tilde),
                 ("a_tilde <= a", fb.a_tilde, cc.a),
                 ("b <= b_tilde", cc.b, fb.b_tilde),
                 ("b_tilde <= B_band", fb.b_tilde, cc.B_band))
    for name, lower, upper in relations:
        lower, upper = np.broadcast_arrays(lower, upper)
        excess = lower - upper
        for col in zip(*np.nonzero(np.atleast_1d(excess) > slack)):
            report.failures.append((tuple(int(c) for c in col), name,
                                    float(np.atleast_1d(excess)[col])))
    return report


def lipschitz_estimate(curve, spacing):
    """Largest slope between adjacent columns.

    Returns
    -------
    value : float
    warning : bool
        True when there are fewer than two columns (value is then 0).
    """
    c = np.asarray(curve, dtype=np.float64)
    if c.ndim == 0 or c.size < 2:
        return 0.0, True
    hs = np.broadcast_to(np.atleast_1d(np.asarray(spacing, dtype=np.float64)), (c.ndim,))
    worst = 0.0
    for axis in range(c.ndim):
        if c.shape[axis] < 2:
            continue
        worst = max(worst, float(np.max(np.abs(np.diff(c, axis=axis))) / hs[axis]))
    return worst, False


@dataclass
class ConnectivityReport:
    components: dict
    bad_columns: list

    @property
    def passed(self):
        return (self.components["E"] == 1 and self.components["E1"] <= 1
                and self.components["E2"] <= 1 and not self.bad_columns)

    def to_dict(self):
        return {"passed": self.passed, "components": self.components,
                "bad_columns": [list(c) for c in self.bad_columns]}


def _count_components(mask, periodic):
    lab, count = ndimage.label(mask)
    parent = list(range(count + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for axis, per in enumerate(periodic):
        if not per:
            continue
        first = np.take(lab, 0, axis=axis)
        last = np.take(lab, -1, axis=axis)
        for p, q in zip(first.ravel(), last.ravel()):
            if p and q:
                parent[find(p)] = find(q)
    return len({find(i) for i in range(1, count + 1)})


def connectivity_check(labels, periodic=None) -> ConnectivityReport:
    """Flood-fill diagnostics of the three regions.

    Passes when E is a single component, E1 and E2 are each connected, and
    every x_n column reads E1 … E … E2 from the bottom (so E has no holes).
    ``periodic`` flags the axes that wrap.
    """
    labels = np.asarray(labels)
    periodic = tuple(periodic) if periodic is not None else (False,) * labels.ndim
    comps = {name: _count_components(labels == code, periodic)
             for name, code in (("E1", Region.E1), ("E", Region.E), ("E2", Region.E2))}
    bad = [tuple(int(c) for c in col)
           for col in np.ndindex(*labels.shape[:-1]) if np.any(np.diff(labels[col]) < 0)]
    return ConnectivityReport(comps, bad)
