"""Solve the one-dimensional stopping game and compare it with its closed form.

Brownian motion with discount 1, running cost H(x) = x and unit stopping
costs on both sides. The value solves V - V''/2 = x between two symmetric
boundaries and equals -1 below -b and +1 above b, where b solves
b - tanh(sqrt(2) b)/sqrt(2) = 1.
"""
import numpy as np
from scipy.optimize import brentq

from dynkin_control.free_boundary import analytic_ab, extract_boundaries, smooth_fit_gap
from dynkin_control.scenario import build_band_curves, build_cost, build_diffusion, build_grid, load
from dynkin_control.vi_solver import ObstacleProblem, complementarity_residual, solve_two_obstacle

r2 = np.sqrt(2.0)
b = brentq(lambda s: s - np.tanh(r2 * s) / r2 - 1.0, 1.0, 3.0)


def exact(x):
    inside = x - np.sinh(r2 * x) / (r2 * np.cosh(r2 * b))
    return np.where(x < -b, -1.0, np.where(x > b, 1.0, inside))


scenario = load("s1")
grid = build_grid(scenario)
problem = ObstacleProblem.from_cost(build_diffusion(scenario), grid, build_cost(scenario))
solution = solve_two_obstacle(problem, omega=scenario.solver.omega, tol=scenario.solver.tol)
print(f"PSOR: {solution.iterations} sweeps, complementarity residual "
      f"{complementarity_residual(solution, problem):.1e}")

fb = extract_boundaries(solution, problem)
print(f"free boundaries  a~ = {float(fb.a_tilde):+.5f}  b~ = {float(fb.b_tilde):+.5f}  (exact ±{b:.5f})")
print(f"max |V - exact| = {np.max(np.abs(solution.V.values - exact(grid.xn))):.2e} at h = {grid.spacing[0]}")

low, high = smooth_fit_gap(solution, problem, fb)
print(f"smooth fit: slope mismatch {float(low):.2e} at a~ and {float(high):.2e} at b~ (O(h))")

A, B = build_band_curves(scenario, grid)
cc = analytic_ab(problem, A, B)
print(f"comparison curves a = {float(cc.a):+.3f}, b = {float(cc.b):+.3f} lie inside [a~, b~]")
