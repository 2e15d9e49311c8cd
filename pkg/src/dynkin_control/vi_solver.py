"""Projected SOR for the two-obstacle problem.

Find ``-f1 <= V <= f2`` with ``αV - ℒV = H`` where neither obstacle binds,
``αV - ℒV - H >= 0`` where ``V = -f1`` and ``<= 0`` where ``V = f2``.
"""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from numba import njit

from .diffusion import DiffusionSpec, generator_field, generator_matrix, slave_mask, sync_periodic
from .errors import ConfigurationError, DataError, IterationError, ParameterError
from .grid import GridField, GridSpec, split_xn_bc


class Region(IntEnum):
    E1 = -1
    E = 0
    E2 = 1


def _fd_grad(fn, points, n, step=1e-4):
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty(pts.shape)
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        out[..., i] = (fn(pts + e) - fn(pts - e)) / (2 * step)
    return out


def _fd_hess(fn, points, n, step=1e-3):
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty(pts.shape + (n,))
    f0 = fn(pts)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        out[..., i, i] = (fn(pts + ei) - 2 * f0 + fn(pts - ei)) / step**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            v = (fn(pts + ei + ej) - fn(pts + ei - ej) - fn(pts - ei + ej) + fn(pts - ei - ej)) / (4 * step**2)
            out[..., i, j] = out[..., j, i] = v
    return out


@dataclass
class CostSpec:
    """Running cost ``H`` and obstacle costs ``f1``, ``f2``.

    All callables are vectorised over ``points[..., n]``. Gradients and
    Hessians of the obstacles are optional; central differences are used
    when they are missing.
    """

    H: Callable
    f1: Callable
    f2: Callable
    f1_grad: Optional[Callable] = None
    f2_grad: Optional[Callable] = None
    f1_hess: Optional[Callable] = None
    f2_hess: Optional[Callable] = None

    @classmethod
    def constant_obstacles(cls, H, f1=1.0, f2=1.0):
        def const(c):
            return lambda x: np.full(np.shape(x)[:-1], float(c))
        return cls(H, const(f1), const(f2),
                   lambda x: np.zeros(np.shape(x)), lambda x: np.zeros(np.shape(x)),
                   lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
                   lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)))

    def obstacle(self, which):
        return self.f1 if which == 1 else self.f2

    def gradient(self, which, points, n):
        g = self.f1_grad if which == 1 else self.f2_grad
        if g is not None:
            return np.broadcast_to(np.asarray(g(points), dtype=np.float64), np.shape(points)).copy()
        return _fd_grad(self.obstacle(which), points, n)

    def hessian(self, which, points, n):
        g = self.f1_hess if which == 1 else self.f2_hess
        shape = np.shape(points) + (n,)
        if g is not None:
            return np.broadcast_to(np.asarray(g(points), dtype=np.float64), shape).copy()
        return _fd_hess(self.obstacle(which), points, n)

    def generator_of_obstacle(self, spec: DiffusionSpec, which, points):
        """Exact ℒf_i at arbitrary points."""
        mu, A = spec.coefficients(points)
        g = self.gradient(which, points, spec.n)
        hs = self.hessian(which, points, spec.n)
        return np.einsum("...i,...i->...", mu, g) + np.einsum("...ij,...ij->...", A, hs)


@dataclass
class ObstacleProblem:
    """Discretised two-obstacle problem on a grid."""

    spec: DiffusionSpec
    grid: GridSpec
    H: GridField
    f1: GridField
    f2: GridField
    cost: Optional[CostSpec] = None

    def __post_init__(self):
        if self.spec.n != self.grid.ndim:
            raise ConfigurationError("diffusion and grid dimensions differ")
        for name in ("H", "f1", "f2"):
            if getattr(self, name).grid != self.grid:
                raise ConfigurationError(f"{name} lives on a different grid")
        if not (np.all(self.f1.values > 0) and np.all(self.f2.values > 0)):
            raise ConfigurationError("obstacles must satisfy -f1 < 0 < f2", field="cost")

    @classmethod
    def from_cost(cls, spec: DiffusionSpec, grid: GridSpec, cost: CostSpec):
        return cls(spec, grid, GridField.from_function(grid, cost.H),
                   GridField.from_function(grid, cost.f1),
                   GridField.from_function(grid, cost.f2), cost)

    @property
    def bound(self):
        """Obstacle bound ``M``: ``-M < -f1`` and ``f2 < M`` on the grid."""
        return float(max(self.f1.values.max(), self.f2.values.max()))


@dataclass
class ObstacleSolution:
    V: GridField
    labels: np.ndarray
    iterations: int
    residual: float
    xn_bc: tuple = field(default=("pin", "pin"))


@njit(cache=True)
def _sweep_residual(indptr, indices, data, b, lo, hi, v, rows):
    worst = 0.0
    for r in rows:
        acc = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            acc += data[k] * v[indices[k]]
        R = acc - b[r]
        c = max(min(R, v[r] - lo[r]), v[r] - hi[r])
        if abs(c) > worst:
            worst = abs(c)
    return worst


@njit(cache=True)
def _psor(indptr, indices, data, b, lo, hi, v, rows, omega, tol, max_iter, check_every):
    n_rows = rows.shape[0]
    diag = np.empty(n_rows)
    for q in range(n_rows):
        r = rows[q]
        d = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            if indices[k] == r:
                d += data[k]
        diag[q] = d
    res = _sweep_residual(indptr, indices, data, b, lo, hi, v, rows)
    it = 0
    while it < max_iter and res >= tol:
        forward = it % 2 == 0
        for s in range(n_rows):
            q = s if forward else n_rows - 1 - s
            r = rows[q]
            acc = b[r]
            for k in range(indptr[r], indptr[r + 1]):
                acc -= data[k] * v[indices[k]]
            x = v[r] + omega * acc / diag[q]
            if x < lo[r]:
                x = lo[r]
            elif x > hi[r]:
                x = hi[r]
            v[r] = x
        it += 1
        if it % check_every == 0 or it == max_iter:
            res = _sweep_residual(indptr, indices, data, b, lo, hi, v, rows)
    return it, res


def _pinned_values(problem, active, bottom, top):
    """Initial guess with pinned x_n edges set to the obstacles."""
    lo = -problem.f1.values
    hi = problem.f2.values
    v = np.clip(problem.H.values / problem.spec.alpha, lo, hi)
    if bottom == "pin":
        v[..., 0] = lo[..., 0]
    if top == "pin":
        v[..., -1] = hi[..., -1]
    return v


def operator_matrix(problem: ObstacleProblem, xn_bc=("pin", "pin")):
    """``M = αI − ℒ_h`` restricted to stencil rows, plus the row mask."""
    L, active = generator_matrix(problem.spec, problem.grid, xn_bc)
    M = (problem.spec.alpha * sp.diags(active.ravel().astype(float)) - L).tocsr()
    M.sort_indices()
    return M, active


def solve_two_obstacle(problem: ObstacleProblem, omega=1.5, tol=1e-8, max_iter=100_000,
                       top_bc="pin", bottom_bc="pin", tol_label=1e-6, check_every=10,
                       initial=None) -> ObstacleSolution:
    """Projected SOR with alternating lexicographic sweeps.

    Parameters
    ----------
    problem : ObstacleProblem
    omega : float
        Relaxation factor in (0, 2).
    tol : float
        Target for the two-sided complementarity residual.
    max_iter : int
        Sweep budget.
    top_bc, bottom_bc : {"pin", "neumann"}
        x_n edge rows: pinned to the obstacle (``f2`` on top, ``-f1`` at the
        bottom) or mirror ghost.
    initial : ndarray, optional
        Starting iterate; defaults to ``clip(H/α, -f1, f2)``.

    Raises
    ------
    ParameterError
        ``omega`` outside (0, 2).
    IterationError
        Residual still above ``tol`` after ``max_iter`` sweeps.
    """
    if not 0.0 < omega < 2.0:
        raise ParameterError(f"omega must lie in (0, 2), got {omega}", field="solver.omega")
    if tol <= 0 or max_iter < 1:
        raise ParameterError("tol must be positive and max_iter at least 1", field="solver")
    bc = split_xn_bc((bottom_bc, top_bc))
    M, active = operator_matrix(problem, bc)
    v = _pinned_values(problem, active, *bc)
    if initial is not None:
        v = np.where(active, np.clip(initial, -problem.f1.values, problem.f2.values), v)
    v = np.ascontiguousarray(v, dtype=np.float64).ravel()
    lo = np.ascontiguousarray(-problem.f1.values).ravel()
    hi = np.ascontiguousarray(problem.f2.values).ravel()
    b = np.ascontiguousarray(problem.H.values).ravel()
    rows = np.flatnonzero(active.ravel()).astype(np.int64)
    iterations, res = _psor(M.indptr, M.indices, M.data, b, lo, hi, v, rows,
                            float(omega), float(tol), int(max_iter), int(check_every))
    values = sync_periodic(problem.grid, v.reshape(problem.grid.shape))
    if res >= tol:
        raise IterationError("projected SOR did not converge", res, iterations,
                             solution=values)
    V = GridField(problem.grid, values)
    labels = classify_regions(V.values, problem.f1.values, problem.f2.values, tol_label)
    sol = ObstacleSolution(V, labels, int(iterations), 0.0, bc)
    sol.residual = complementarity_residual(sol, problem)
    return sol


def hjb_residual(V: np.ndarray, problem: ObstacleProblem, xn_bc=("pin", "pin")):
    """``αV − ℒ_hV − H`` at every node (NaN where the stencil is incomplete)."""
    LV = generator_field(problem.spec, GridField(problem.grid, V), xn_bc)
    return problem.spec.alpha * V - LV - problem.H.values


def complementarity_field(V, problem, xn_bc=("pin", "pin")):
    R = hjb_residual(V, problem, xn_bc)
    c = np.maximum(np.minimum(R, V + problem.f1.values), V - problem.f2.values)
    c[slave_mask(problem.grid)] = np.nan
    return c


def complementarity_residual(solution: ObstacleSolution, problem: ObstacleProblem) -> float:
    """Max over stencil nodes of ``|max(min(R, V + f1), V − f2)|``, ``R = αV − ℒ_hV − H``.

    Zero exactly where either ``R = 0`` with both obstacles slack, or
    ``V = -f1`` with ``R >= 0``, or ``V = f2`` with ``R <= 0``.
    """
    if solution.V.grid != problem.grid:
        raise DataError("solution and problem grids differ")
    c = complementarity_field(solution.V.values, problem, solution.xn_bc)
    return float(np.nanmax(np.abs(c))) if np.any(np.isfinite(c)) else 0.0


def classify_regions(V, f1, f2, tol_label=1e-6) -> np.ndarray:
    """Label nodes ``E1`` (V ≈ −f1), ``E2`` (V ≈ f2) or ``E``.

    Raises
    ------
    ConfigurationError
        An obstacle comes within ``tol_label`` of zero, so a node could be
        within ``tol_label`` of both obstacles.
    """
    V, f1, f2 = (np.asarray(a, dtype=np.float64) for a in (V, f1, f2))
    if np.any(f1 <= tol_label) or np.any(f2 <= tol_label):
        raise ConfigurationError("obstacles must stay more than tol_label away from zero",
                                 field="solver.tol_label")
    labels = np.zeros(V.shape, dtype=np.int8)
    labels[V <= -f1 + tol_label] = Region.E1
    labels[V >= f2 - tol_label] = Region.E2
    return labels
