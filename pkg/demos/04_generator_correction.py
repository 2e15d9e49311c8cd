"""Why the one-dimensional pairing needs a corrected drift.

The energy form built from the scale and speed densities matches the
generator only when 2μ = σσ'. For σ = 1, μ = 0.4x that fails, and the
pairing residual with the original generator stalls under refinement,
while the generator with drift γ = σσ' - μ converges at second order.
"""
import numpy as np

from dynkin_control.appendix import Generator, OneDimModel, compatibility_residual, refinement_study

counts = [51, 101, 201, 401, 801]
models = {
    "sigma = x+2, mu = (x+2)/2": OneDimModel(lambda x: (x + 2) / 2, lambda x: x + 2, lambda x: np.ones_like(x)),
    "sigma = 1, mu = 0.4x": OneDimModel(lambda x: 0.4 * x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
}
for label, model in models.items():
    print(f"{label}: max |2mu - sigma sigma'| = {compatibility_residual(model, np.linspace(-1, 1, 201)):.2f}")
    for choice in Generator:
        h, res, order = refinement_study(model, counts, choice)
        cells = "  ".join(f"{r:.2e}" for r in res)
        print(f"  {choice.value:<8} residuals {cells}  orders {np.round(order, 2)}")
