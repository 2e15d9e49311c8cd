"""From the game to singular control: integrate V into W and test the band.

W is the integral of V from the lower boundary, and h is the running cost
that makes W the value of a reflection problem. Reflecting the diffusion at
the free boundaries should cost exactly W; any other band should cost more.
"""
import numpy as np

from dynkin_control.control import Band, build_h, hjb_region_check, simulate_ensemble, value_at
from dynkin_control.free_boundary import extract_boundaries
from dynkin_control.game import MonteCarloParams
from dynkin_control.scenario import build_cost, build_diffusion, build_grid, load
from dynkin_control.vi_solver import ObstacleProblem, solve_two_obstacle

scenario = load("s1")
spec, grid, cost = build_diffusion(scenario), build_grid(scenario), build_cost(scenario)
problem = ObstacleProblem.from_cost(spec, grid, cost)
solution = solve_two_obstacle(problem)
fb = extract_boundaries(solution, problem)
vw = build_h(solution.V, problem.H, fb, spec, labels=solution.labels)

check = hjb_region_check(vw, fb, spec, cost=cost)
print(f"HJB residual in the band {check.in_band_max:.1e}; outside it stays below {check.out_band_max:.3f}")

optimal = Band.from_free_boundary(fb)
bands = [optimal, optimal.widened(0.5), optimal.narrowed(0.5), optimal.translated(0.3)]
mc = MonteCarloParams(paths=20_000, dt=1e-3, t_max=10.0, seed=scenario.seed + 2)
x0 = np.array([0.0])
ensemble = simulate_ensemble(spec, grid, cost, vw.h, bands, x0, mc)
W0 = value_at(vw, fb, cost, x0)
print(f"W(0) = {W0:.4f}")
for band, est in zip(bands, ensemble.estimates()):
    print(f"  {band.name:<12} cost {est.mean:.4f} ± {est.std_error:.4f}  excess {est.mean - W0:+.4f}")
