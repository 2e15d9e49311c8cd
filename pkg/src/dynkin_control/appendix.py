"""One-dimensional theory: scale and speed densities, corrected drift, pairing check.

For ``dX = μ(X)dt + σ(X)dB`` the scale and speed densities are

    ṡ(x) = exp(−∫_base^x 2μ/σ²),    ṁ(x) = (2/σ²) exp(∫_base^x 2μ/σ²),

so ``ṡ·ṁ = 2/σ²``. The form ``ℰ(u, v) = ∫ u′v′/ṁ`` pairs with the generator
of drift ``γ = σσ′ − μ`` under the weight ``ṡ``; the original generator
(drift μ) gives the same pairing only when ``2μ = σσ′``.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.integrate import IntegrationWarning, quad, trapezoid
import warnings

from .errors import DomainError, ParameterError, PreconditionError, QuadratureError
from .grid import GridField, GridSpec, cumulative_from


class Generator(str, Enum):
    L = "L"
    L_GAMMA = "L_gamma"


@dataclass(frozen=True)
class OneDimModel:
    """Scalar diffusion on ``interval`` with vectorised ``mu``, ``sigma``, ``sigma_prime``.

    ``base`` is the lower limit of the exponent integrals (0 unless σ vanishes there).
    """

    mu: Callable
    sigma: Callable
    sigma_prime: Optional[Callable] = None
    alpha: float = 1.0
    interval: tuple = (-1.0, 1.0)
    base: float = 0.0

    def __post_init__(self):
        lo, hi = (float(v) for v in self.interval)
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ParameterError("interval must be finite with lower < upper", "interval")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive", "alpha")
        object.__setattr__(self, "interval", (lo, hi))
        probe = np.linspace(lo, hi, 257)
        if np.any(np.asarray(self.sigma(probe)) <= 0):
            raise DomainError("sigma must be positive on the interval")

    def dsigma(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.sigma_prime is not None:
            return np.broadcast_to(np.asarray(self.sigma_prime(x), dtype=np.float64), x.shape)
        eps = 1e-6 * np.maximum(1.0, np.abs(x))
        return (self.sigma(x + eps) - self.sigma(x - eps)) / (2 * eps)

    def _in_range(self, x):
        lo, hi = self.interval
        x = np.asarray(x, dtype=np.float64)
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise DomainError(f"points outside [{lo}, {hi}]")
        return x


def _exponent(model: OneDimModel, x, tol_q):
    """``∫_base^x 2μ/σ²`` at every entry of ``x`` (piecewise adaptive quadrature)."""

    def rate(y):
        return float(2.0 * model.mu(np.float64(y)) / model.sigma(np.float64(y)) ** 2)

    flat = np.ravel(x)
    knots = np.unique(np.concatenate([flat, [model.base]]))
    pieces = np.zeros(len(knots) - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        for k in range(len(knots) - 1):
            try:
                pieces[k], err = quad(rate, knots[k], knots[k + 1], epsabs=tol_q, epsrel=tol_q)
            except IntegrationWarning as exc:
                raise QuadratureError(f"exponent quadrature failed on [{knots[k]}, {knots[k + 1]}]: {exc}")
    running = np.concatenate([[0.0], np.cumsum(pieces)])
    running -= running[np.searchsorted(knots, model.base)]
    return running[np.searchsorted(knots, flat)].reshape(np.shape(x))


def scale_speed(model: OneDimModel, x, tol_q=1e-10):
    """Scale and speed densities ``(ṡ, ṁ)`` at ``x`` (scalar or array)."""
    x = model._in_range(x)
    expo = _exponent(model, x, tol_q)
    sig = np.asarray(model.sigma(x), dtype=np.float64)
    s_dot = np.exp(-expo)
    m_dot = 2.0 / sig ** 2 * np.exp(expo)
    if np.ndim(x) == 0:
        return float(s_dot), float(m_dot)
    return s_dot, m_dot


def compatibility_residual(model: OneDimModel, x) -> float:
    """``max |2μ − σσ′|`` over the points ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.max(np.abs(2 * model.mu(x) - model.sigma(x) * model.dsigma(x))))


def corrected_drift(model: OneDimModel, x):
    """``γ = σσ′ − μ``."""
    x = model._in_range(x)
    out = model.sigma(x) * model.dsigma(x) - model.mu(x)
    return float(out) if np.ndim(x) == 0 else np.asarray(out, dtype=np.float64)


def apply_1d_generator(model: OneDimModel, u: GridField, choice=Generator.L):
    """``½σ²u″ + b u′`` on the grid with ``b = μ`` or ``γ`` (second-order differences)."""
    choice = Generator(choice)
    x = u.grid.xn
    h = u.grid.spacing[-1]
    du = np.gradient(u.values, h, edge_order=2)
    d2u = np.gradient(du, h, edge_order=2)
    drift = model.mu(x) if choice is Generator.L else corrected_drift(model, x)
    return 0.5 * model.sigma(x) ** 2 * d2u + drift * du


def cosine_bump(grid: GridSpec, k: int) -> GridField:
    """``cos(kπ(x − lo)/(hi − lo))``: zero slope at both ends of the grid."""
    lo, hi = grid.lower[-1], grid.upper[-1]
    return GridField(grid, np.cos(k * np.pi * (grid.xn - lo) / (hi - lo)))


@dataclass
class PairingReport:
    generator: str
    energy: float
    pairing: float
    residual: float

    def to_dict(self):
        return {"generator": self.generator, "energy": self.energy, "pairing": self.pairing,
                "residual": self.residual}


def pairing_terms(model: OneDimModel, u: GridField, v: GridField, generator_choice=Generator.L,
                  tol_bc=None, tol_q=1e-10) -> PairingReport:
    """Energy ``∫u′v′/ṁ`` and pairing ``∫(−Gu)·v·ṡ`` by trapezoid on the grid.

    Raises
    ------
    PreconditionError
        If ``u′`` or ``v′`` is not zero at the ends (within ``tol_bc``,
        default ``h``).
    """
    if u.grid != v.grid or u.grid.ndim != 1:
        raise ParameterError("u and v must share a one-dimensional grid")
    x = u.grid.xn
    h = u.grid.spacing[-1]
    tol_bc = h if tol_bc is None else tol_bc
    du = np.gradient(u.values, h, edge_order=2)
    dv = np.gradient(v.values, h, edge_order=2)
    for name, d in (("u", du), ("v", dv)):
        worst = max(abs(d[0]), abs(d[-1]))
        if worst > tol_bc:
            raise PreconditionError(f"{name}' at the interval ends is {worst:.3g}, above {tol_bc:.3g}")
    s_dot, m_dot = scale_speed(model, x, tol_q)
    energy = float(trapezoid(du * dv / m_dot, x))
    pairing = float(trapezoid(-apply_1d_generator(model, u, generator_choice) * v.values * s_dot, x))
    return PairingReport(Generator(generator_choice).value, energy, pairing, abs(energy - pairing))


def dirichlet_pairing_residual(model: OneDimModel, u: GridField, v: GridField,
                               generator_choice=Generator.L, tol_bc=None) -> float:
    """``|ℰ(u, v) − (−Gu, v)|`` for the chosen generator."""
    return pairing_terms(model, u, v, generator_choice, tol_bc).residual


def refinement_study(model: OneDimModel, counts, generator_choice=Generator.L, k_u=1, k_v=1):
    """Pairing residual of two cosine bumps on successively finer grids.

    Returns ``(h, residuals, orders)`` with ``orders[i] = log2``-type slopes
    between consecutive grids.
    """
    lo, hi = model.interval
    hs, res = [], []
    for n in counts:
        grid = GridSpec([lo], [hi], [n])
        hs.append(grid.spacing[0])
        res.append(dirichlet_pairing_residual(model, cosine_bump(grid, k_u), cosine_bump(grid, k_v),
                                              generator_choice))
    hs, res = np.array(hs), np.array(res)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(res[:-1] / res[1:]) / np.log(hs[:-1] / hs[1:])
    return hs, res, orders


def build_hW_1d(model: OneDimModel, V: GridField, H: GridField, a: float, C: float = 0.0,
                f1_prime_a: float = 0.0, tol_q=1e-10):
    """``h = ∫_0^x Hṡ + C`` and ``W = ∫_a^x Vṡ + (−f1′(a)/ṁ(a) + h(a))/α``.

    Integrals are trapezoids on the grid (with a partial cell at 0 and at
    ``a``). Returns ``(h, W)`` as grid fields.
    """
    grid = V.grid
    if grid.ndim != 1 or H.grid != grid:
        raise ParameterError("V and H must share a one-dimensional grid")
    y = grid.xn
    if not (y[0] <= a <= y[-1]):
        raise DomainError(f"a={a} outside the grid")
    s_dot, _ = scale_speed(model, y, tol_q)
    _, m_a = scale_speed(model, np.float64(a), tol_q)
    h = cumulative_from(H.values * s_dot, y, 0.0) + C
    # h(a) through the same partial-cell trapezoid, read off at the nearest node
    j = int(np.argmin(np.abs(y - a)))
    h_a = float(h[j] - cumulative_from(H.values * s_dot, y, a)[j])
    W = cumulative_from(V.values * s_dot, y, a) + (-f1_prime_a / m_a + h_a) / model.alpha
    return GridField(grid, h), GridField(grid, W)


def appendix_table(model: OneDimModel, grid: GridSpec, tol_q=1e-10):
    """Columns ``x, s_dot, m_dot, gamma, compat`` on the grid nodes."""
    x = grid.xn
    s_dot, m_dot = scale_speed(model, x, tol_q)
    compat = np.abs(2 * model.mu(x) - model.sigma(x) * model.dsigma(x))
    return {"x": x, "s_dot": s_dot, "m_dot": m_dot, "gamma": corrected_drift(model, x), "compat": compat}
