"""A two-dimensional game whose continuation band tilts with the lateral variable.

The running cost x2 + 0.5 sin(x1) shifts the band sideways, periodically in
x1. The extracted boundaries enclose the analytic comparison curves and the
region labels form three connected layers.
"""
import numpy as np

from dynkin_control.control import build_h, c_adjacent_jump, hjb_region_check
from dynkin_control.free_boundary import (analytic_ab, connectivity_check, extract_boundaries, lipschitz_estimate,
                                          ordering_check)
from dynkin_control.scenario import build_band_curves, build_cost, build_diffusion, build_grid, load
from dynkin_control.vi_solver import ObstacleProblem, solve_two_obstacle

scenario = load("s2")
spec, grid, cost = build_diffusion(scenario), build_grid(scenario), build_cost(scenario)
problem = ObstacleProblem.from_cost(spec, grid, cost)
solution = solve_two_obstacle(problem)
print(f"PSOR on {grid.counts}: {solution.iterations} sweeps")

fb = extract_boundaries(solution, problem)
A, B = build_band_curves(scenario, grid)
cc = analytic_ab(problem, A, B)
x1 = grid.column_points()[:, 0]
for k in range(0, len(x1), 8):
    print(f"  x1 = {x1[k]:+.3f}   a~ = {fb.a_tilde[k]:+.3f} (a = {cc.a[k]:+.3f})   "
          f"b~ = {fb.b_tilde[k]:+.3f} (b = {cc.b[k]:+.3f})")
print(f"ordering holds: {ordering_check(fb, cc).passed}; "
      f"three connected regions: {connectivity_check(solution.labels, grid.periodic).passed}")
value, _ = lipschitz_estimate(fb.a_tilde, grid.spacing[:-1])
print(f"Lipschitz constant of a~: {value:.3f}")

vw = build_h(solution.V, problem.H, fb, spec, labels=solution.labels)
check = hjb_region_check(vw, fb, spec, cost=cost, xn_bc=solution.xn_bc)
print(f"HJB residual in the band {check.in_band_max:.1e}; "
      f"largest column-to-column change of the constant C: {c_adjacent_jump(vw.C, grid.periodic):.2f}")
print(f"range of C over the columns: [{np.min(vw.C):.3f}, {np.max(vw.C):.3f}]")
