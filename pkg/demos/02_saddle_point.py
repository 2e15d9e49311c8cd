"""Check the saddle point of the stopping game by Monte Carlo.

Both players use the hitting times of the free boundaries. Shifting either
boundary, or stopping at once, must not help the player who moves it. All
strategy pairs share the same Brownian paths, so the comparisons use paired
standard errors.
"""
import numpy as np

from dynkin_control.free_boundary import extract_boundaries
from dynkin_control.game import MonteCarloParams, default_alternatives, saddle_check
from dynkin_control.scenario import build_cost, build_diffusion, build_grid, load
from dynkin_control.vi_solver import ObstacleProblem, solve_two_obstacle

scenario = load("s1")
spec, grid, cost = build_diffusion(scenario), build_grid(scenario), build_cost(scenario)
problem = ObstacleProblem.from_cost(spec, grid, cost)
solution = solve_two_obstacle(problem)
fb = extract_boundaries(solution, problem)

x0 = [0.5]
V0 = float(np.interp(x0[0], grid.xn, solution.V.values))
mc = MonteCarloParams(paths=20_000, dt=1e-3, t_max=15.0, seed=scenario.seed)
report = saddle_check(spec, x0, V0, fb, default_alternatives(fb, (0.25, 0.5)), cost, mc, grid)

print(f"V({x0[0]}) = {V0:.4f}; simulated J = {report.value.mean:.4f} ± {report.value.std_error:.4f}")
for c in report.comparisons:
    print(f"  {c['name']:<18} {c['relation']:<38} difference {c['difference']:+.4f} "
          f"(paired SE {c['paired_std_error']:.4f})  {'holds' if c['passed'] else 'VIOLATED'}")
