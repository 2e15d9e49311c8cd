"""Monte Carlo evaluation of the Dynkin game.

The payoff of a pair of stopping times is

    J_x(τ, σ) = E_x[ ∫_0^{τ∧σ} e^{-αt} H(X_t) dt
                     + e^{-α(τ∧σ)} (f2(X_τ) 1{τ<σ} - f1(X_σ) 1{σ≤τ}) ].

Strategies are first entrance times of regions bounded by a curve in x_n.
All strategy pairs of one call share the same simulated paths (common
random numbers), so their differences are estimated with paired errors.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .diffusion import DiffusionSpec
from .errors import BlowUpError, ParameterError
from .grid import GridSpec, as_column_array, interpolate_columns, lerp_extend
from .paths import CoefficientTable, column_value, euler_step, field_at, field_table
from .rng import normal, path_key
from .vi_solver import CostSpec

MODES = {"never": 0, "always": 1, "below": 2, "above": 3}


@dataclass(frozen=True)
class MonteCarloParams:
    paths: int = 100_000
    dt: float = 1e-3
    t_max: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.paths < 1:
            raise ParameterError("need at least one path", field="mc.paths")
        if not (self.dt > 0 and self.t_max >= self.dt):
            raise ParameterError("need dt > 0 and t_max >= dt", field="mc.dt")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative", field="mc.seed")

    @property
    def steps(self):
        return int(round(self.t_max / self.dt))

    def to_dict(self):
        return {"paths": self.paths, "dt": self.dt, "t_max": self.t_max, "seed": self.seed}


@dataclass
class StoppingStrategy:
    """First entrance into a region ``{x_n <= c(x̄)}`` or ``{x_n >= c(x̄)}``.

    Parameters
    ----------
    kind : {"tau", "sigma"}
        ``tau`` stops with payoff ``f2``, ``sigma`` with ``-f1``.
    mode : {"below", "above", "always", "never"}
    curve : float or ndarray
        Threshold per x̄ column (ignored for ``always``/``never``).
    name : str
    """

    kind: str
    mode: str
    curve: object = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("tau", "sigma"):
            raise ParameterError(f"unknown strategy kind {self.kind!r}")
        if self.mode not in MODES:
            raise ParameterError(f"unknown strategy mode {self.mode!r}")
        self.curve = np.asarray(self.curve, dtype=np.float64)
        if not self.name:
            self.name = f"{self.kind}:{self.mode}"

    @classmethod
    def below(cls, kind, curve, name=""):
        return cls(kind, "below", curve, name)

    @classmethod
    def above(cls, kind, curve, name=""):
        return cls(kind, "above", curve, name)

    @classmethod
    def always(cls, kind, name=""):
        return cls(kind, "always", 0.0, name)

    @classmethod
    def never(cls, kind, name=""):
        return cls(kind, "never", 0.0, name)

    def shifted(self, delta, name=""):
        return StoppingStrategy(self.kind, self.mode, self.curve + delta, name)

    def contains(self, grid: GridSpec, points):
        """Region membership of ``points[..., n]``."""
        pts = np.asarray(points, dtype=np.float64)
        if self.mode == "never":
            return np.zeros(pts.shape[:-1], dtype=bool)
        if self.mode == "always":
            return np.ones(pts.shape[:-1], dtype=bool)
        level = interpolate_columns(grid, np.broadcast_to(self.curve, grid.column_shape), pts[..., :-1])
        return pts[..., -1] <= level if self.mode == "below" else pts[..., -1] >= level

    def predicate(self, grid: GridSpec):
        return lambda point: bool(self.contains(grid, np.asarray(point)[None])[0])


@dataclass
class GameEstimate:
    mean: float
    std_error: float
    paths: int
    truncation_bias_bound: float
    h_tail_bound: float = 0.0
    truncated: int = 0

    def to_dict(self):
        return {"estimate": self.mean, "std_error": self.std_error, "paths": self.paths,
                "truncation_bias_bound": self.truncation_bias_bound,
                "h_tail_bound": self.h_tail_bound, "truncated_paths": self.truncated}


# --------------------------------------------------------------------------
# Path simulation

def simulate_path(spec: DiffusionSpec, x0, dt, t_max, seed, path=0):
    """One Euler–Maruyama path ``(t_k, x_k)`` using the spec callables.

    Raises
    ------
    BlowUpError
        The state became non-finite.
    """
    if not (dt > 0 and t_max >= dt):
        raise ParameterError("need dt > 0 and t_max >= dt")
    steps = int(round(t_max / dt))
    x = np.empty((steps + 1, spec.n))
    x[0] = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    key = np.uint64(path_key(np.uint64(seed), np.uint64(path)))
    sq = math.sqrt(dt)
    for k in range(steps):
        mu, _ = spec.coefficients(x[k])
        sig = np.asarray(spec.sigma(x[k]), dtype=np.float64)
        m = sig.shape[-1]
        dw = sq * np.array([normal(key, k * m + j) for j in range(m)])
        x[k + 1] = x[k] + mu * dt + sig @ dw
        if not np.all(np.isfinite(x[k + 1])):
            raise BlowUpError(k + 1)
    return np.arange(steps + 1) * dt, x


def simulate_terminal(spec: DiffusionSpec, x0, dt, t_max, mc_paths, seed):
    """Terminal states of many paths, vectorised over paths.

    Uses the same per-path streams as :func:`simulate_path`.
    """
    from .rng import normals

    steps = int(round(t_max / dt))
    ids = np.arange(mc_paths)
    x = np.tile(np.atleast_1d(np.asarray(x0, dtype=np.float64)), (mc_paths, 1))
    sq = math.sqrt(dt)
    for k in range(steps):
        mu, _ = spec.coefficients(x)
        sig = np.asarray(spec.sigma(x), dtype=np.float64)
        m = sig.shape[-1]
        dw = sq * np.stack([normals(seed, ids, k * m + j) for j in range(m)], axis=-1)
        x = x + mu * dt + np.einsum("pij,pj->pi", sig, dw)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(k + 1)
    return x


# --------------------------------------------------------------------------
# Compiled game kernel

@njit(cache=True)
def _levels(modes, curves, x, lo, hs, cs, per, levels):
    """Threshold of every curve strategy at the lateral position of ``x``."""
    for s in range(modes.shape[0]):
        if modes[s] >= 2:
            levels[s] = column_value(curves[s], x, lo, hs, cs, per)


@njit(cache=True)
def _inside(mode, level, xn):
    if mode == 0:
        return False
    if mode == 1:
        return True
    if mode == 2:
        return xn <= level
    return xn >= level


@njit(cache=True)
def _game_kernel(seed, first_path, n_paths, x0, dt, n_steps, alpha,
                 mu_t, sig_t, n, m, const, lo, hs, cs, per,
                 H_t, f1_t, f2_t, modes, curves, pay_override,
                 pair_tau, pair_sig, out, status):
    n_pairs = pair_tau.shape[0]
    sqdt = np.sqrt(dt)
    decay = np.exp(-alpha * dt)
    mu_buf = np.empty(n)
    sig_buf = np.empty(n * m)
    x = np.empty(n)
    xn = np.empty(n)
    levels = np.zeros(modes.shape[0])
    active = np.empty(n_pairs, dtype=np.bool_)
    for p in range(n_paths):
        key = path_key(seed, first_path + p)
        for i in range(n):
            x[i] = x0[i]
        _levels(modes, curves, x, lo, hs, cs, per, levels)
        remaining = 0
        for q in range(n_pairs):
            active[q] = True
            st, tt = pair_sig[q], pair_tau[q]
            if _inside(modes[st], levels[st], x[n - 1]):
                v = pay_override[st]
                out[q, p] = -field_at(f1_t, x, lo, hs, cs, per) if np.isnan(v) else v
                active[q] = False
            elif _inside(modes[tt], levels[tt], x[n - 1]):
                v = pay_override[tt]
                out[q, p] = field_at(f2_t, x, lo, hs, cs, per) if np.isnan(v) else v
                active[q] = False
            else:
                remaining += 1
        integral = 0.0
        disc = 1.0
        h_prev = field_at(H_t, x, lo, hs, cs, per)
        step = 0
        while remaining > 0 and step < n_steps:
            euler_step(x, key, step, dt, sqdt, mu_t, sig_t, n, m, const, lo, hs, cs, per,
                       mu_buf, sig_buf, xn)
            finite = True
            for i in range(n):
                if not np.isfinite(xn[i]):
                    finite = False
            if not finite:
                status[p] = step + 1
                break
            for i in range(n):
                x[i] = xn[i]
            step += 1
            disc1 = disc * decay
            h_now = field_at(H_t, x, lo, hs, cs, per)
            integral += 0.5 * dt * (disc * h_prev + disc1 * h_now)
            disc = disc1
            h_prev = h_now
            if n > 1:
                _levels(modes, curves, x, lo, hs, cs, per, levels)
            for q in range(n_pairs):
                if not active[q]:
                    continue
                st, tt = pair_sig[q], pair_tau[q]
                if _inside(modes[st], levels[st], x[n - 1]):
                    v = pay_override[st]
                    term = -field_at(f1_t, x, lo, hs, cs, per) if np.isnan(v) else v
                    out[q, p] = integral + disc * term
                    active[q] = False
                    remaining -= 1
                elif _inside(modes[tt], levels[tt], x[n - 1]):
                    v = pay_override[tt]
                    term = field_at(f2_t, x, lo, hs, cs, per) if np.isnan(v) else v
                    out[q, p] = integral + disc * term
                    active[q] = False
                    remaining -= 1
        for q in range(n_pairs):
            if active[q]:
                out[q, p] = integral
                if status[p] == 0:
                    status[p] = -1


@njit(cache=True)
def _game_kernel_1d(seed, first_path, n_paths, x0, dt, n_steps, alpha, mu, sig, y0, hy, count,
                    H_t, f1_t, f2_t, modes, levels, pay_override, pair_tau, pair_sig, out, status):
    """Scalar-state version of :func:`_game_kernel` for one axis and constant coefficients."""
    n_pairs = pair_tau.shape[0]
    sqdt = np.sqrt(dt)
    decay = np.exp(-alpha * dt)
    active = np.empty(n_pairs, dtype=np.bool_)
    for p in range(n_paths):
        key = path_key(seed, first_path + p)
        y = x0
        remaining = 0
        for q in range(n_pairs):
            active[q] = True
            st, tt = pair_sig[q], pair_tau[q]
            if _inside(modes[st], levels[st], y):
                v = pay_override[st]
                out[q, p] = -lerp_extend(f1_t, y, y0, hy, count) if np.isnan(v) else v
                active[q] = False
            elif _inside(modes[tt], levels[tt], y):
                v = pay_override[tt]
                out[q, p] = lerp_extend(f2_t, y, y0, hy, count) if np.isnan(v) else v
                active[q] = False
            else:
                remaining += 1
        integral = 0.0
        disc = 1.0
        h_prev = lerp_extend(H_t, y, y0, hy, count)
        step = 0
        while remaining > 0 and step < n_steps:
            yn = y + mu * dt
            yn += sig * (sqdt * normal(key, step))
            y = yn
            step += 1
            disc1 = disc * decay
            h_now = lerp_extend(H_t, y, y0, hy, count)
            integral += 0.5 * dt * (disc * h_prev + disc1 * h_now)
            disc = disc1
            h_prev = h_now
            for q in range(n_pairs):
                if not active[q]:
                    continue
                st, tt = pair_sig[q], pair_tau[q]
                if _inside(modes[st], levels[st], y):
                    v = pay_override[st]
                    term = -lerp_extend(f1_t, y, y0, hy, count) if np.isnan(v) else v
                    out[q, p] = integral + disc * term
                    active[q] = False
                    remaining -= 1
                elif _inside(modes[tt], levels[tt], y):
                    v = pay_override[tt]
                    term = lerp_extend(f2_t, y, y0, hy, count) if np.isnan(v) else v
                    out[q, p] = integral + disc * term
                    active[q] = False
                    remaining -= 1
        for q in range(n_pairs):
            if active[q]:
                out[q, p] = integral
                status[p] = -1


def _summarise(values, M, alpha, t_max, h_sup, truncated):
    n = values.shape[0]
    mean = math.fsum(values) / n
    se = math.sqrt(math.fsum((values - mean) ** 2) / (n - 1) / n) if n > 1 else 0.0
    tail = math.exp(-alpha * t_max)
    return GameEstimate(mean, se, n, M * tail, h_sup * tail / alpha, truncated)


@dataclass
class GameBatch:
    """Per-path payoffs for several strategy pairs on common paths."""

    values: np.ndarray          # (pairs, paths)
    estimates: list
    truncated: np.ndarray       # (pairs,) count of paths that hit t_max

    def paired_difference(self, i, j):
        """Mean and standard error of ``J_i − J_j`` on the shared paths."""
        d = self.values[i] - self.values[j]
        n = d.shape[0]
        mean = math.fsum(d) / n
        se = math.sqrt(math.fsum((d - mean) ** 2) / (n - 1) / n) if n > 1 else 0.0
        return mean, se


def _tables(grid, cost, spec):
    pts = grid.points()
    H = np.broadcast_to(cost.H(pts), grid.shape)
    f1 = np.broadcast_to(cost.f1(pts), grid.shape)
    f2 = np.broadcast_to(cost.f2(pts), grid.shape)
    return field_table(H), field_table(f1), field_table(f2)


def evaluate_games(spec: DiffusionSpec, grid: GridSpec, cost: CostSpec, x0, pairs, mc: MonteCarloParams,
                   payoff_override=None, first_path=0, fast=True) -> GameBatch:
    """Estimate ``J_x(τ, σ)`` for every ``(tau, sigma)`` in ``pairs`` on common paths.

    Parameters
    ----------
    spec, grid, cost
        Coefficients are tabulated on ``grid``; the fields ``H``, ``f1``,
        ``f2`` continue linearly in x_n outside it.
    x0 : array_like
        Start point.
    pairs : list of (StoppingStrategy, StoppingStrategy)
    payoff_override : dict, optional
        Strategy name -> constant stopping payoff replacing ``f2``/``-f1``.
    first_path : int
        Index of the first path stream; lets a large run be split in chunks.
    fast : bool
        One-axis problems with constant coefficients use a scalar kernel;
        ``False`` forces the general one. Both give identical numbers.
    """
    if mc.paths < 1:
        raise ParameterError("need at least one path", field="mc.paths")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    strategies = []
    index = {}
    for tau, sig in pairs:
        for s in (tau, sig):
            if id(s) not in index:
                index[id(s)] = len(strategies)
                strategies.append(s)
    for tau, sig in pairs:
        if tau.kind != "tau" or sig.kind != "sigma":
            raise ParameterError("pairs must be ordered (tau, sigma)")
    ncol = int(np.prod(grid.column_shape))
    curves = np.zeros((len(strategies), max(ncol, 1)))
    for k, s in enumerate(strategies):
        curves[k] = as_column_array(grid, s.curve).ravel()
    modes = np.array([MODES[s.mode] for s in strategies], dtype=np.int64)
    override = np.full(len(strategies), np.nan)
    for k, s in enumerate(strategies):
        if payoff_override and s.name in payoff_override:
            override[k] = payoff_override[s.name]
    pt = np.array([index[id(t)] for t, _ in pairs], dtype=np.int64)
    ps = np.array([index[id(s)] for _, s in pairs], dtype=np.int64)
    coeff = CoefficientTable.build(spec, grid)
    H_t, f1_t, f2_t = _tables(grid, cost, spec)
    out = np.zeros((len(pairs), mc.paths))
    status = np.zeros(mc.paths, dtype=np.int64)
    if fast and grid.ndim == 1 and coeff.constant:
        # constant coefficients keep every state finite, so no blow-up check
        _game_kernel_1d(np.uint64(mc.seed), np.int64(first_path), mc.paths, float(x0[0]), float(mc.dt),
                        mc.steps, float(spec.alpha), float(coeff.mu[0]), float(coeff.sigma[0]),
                        float(grid.lower[0]), float(grid.spacing[0]), int(grid.counts[0]),
                        H_t, f1_t, f2_t, modes, curves[:, 0].copy(), override, pt, ps, out, status)
    else:
        _game_kernel(np.uint64(mc.seed), np.int64(first_path), mc.paths, x0, float(mc.dt), mc.steps,
                     float(spec.alpha), *coeff.kernel_args(), H_t, f1_t, f2_t, modes, curves, override,
                     pt, ps, out, status)
    bad = np.flatnonzero(status > 0)
    if len(bad):
        raise BlowUpError(int(status[bad[0]]))
    M = float(max(np.max(np.abs(f1_t)), np.max(np.abs(f2_t)), *(np.abs(override[np.isfinite(override)]))))
    h_sup = float(np.max(np.abs(H_t)))
    truncated = np.full(len(pairs), int(np.sum(status < 0)))
    estimates = [_summarise(out[q], M, spec.alpha, mc.t_max, h_sup, int(truncated[q]))
                 for q in range(len(pairs))]
    return GameBatch(out, estimates, truncated)


def evaluate_game(spec: DiffusionSpec, x0, tau: StoppingStrategy, sigma: StoppingStrategy,
                  cost: CostSpec, mc: MonteCarloParams, grid: GridSpec) -> GameEstimate:
    """Monte Carlo estimate of ``J_x0(τ, σ)``; ties go to σ."""
    return evaluate_games(spec, grid, cost, x0, [(tau, sigma)], mc).estimates[0]


# --------------------------------------------------------------------------
# Saddle-point check

def saddle_strategies(fb):
    """``τ̂`` = entrance into ``{x_n ≥ b̃}``, ``σ̂`` = entrance into ``{x_n ≤ ã}``."""
    return (StoppingStrategy.above("tau", fb.b_tilde, "tau_hat"),
            StoppingStrategy.below("sigma", fb.a_tilde, "sigma_hat"))


def default_alternatives(fb, shifts=(0.25,)):
    """Shifted boundaries for both players plus immediate stopping."""
    tau_hat, sigma_hat = saddle_strategies(fb)
    alts = []
    for d in shifts:
        alts += [sigma_hat.shifted(+d, f"sigma_shift_{d:+g}"), sigma_hat.shifted(-d, f"sigma_shift_{-d:+g}"),
                 tau_hat.shifted(+d, f"tau_shift_{d:+g}"), tau_hat.shifted(-d, f"tau_shift_{-d:+g}")]
    alts += [StoppingStrategy.always("sigma", "sigma_immediate"), StoppingStrategy.always("tau", "tau_immediate")]
    return alts


@dataclass
class SaddleReport:
    x0: list
    V_ref: float
    value: GameEstimate
    comparisons: list = field(default_factory=list)
    mc: Optional[MonteCarloParams] = None

    @property
    def value_matches(self):
        return abs(self.value.mean - self.V_ref) <= 3.0 * self.value.std_error + 1e-15

    @property
    def passed(self):
        return self.value_matches and all(c["passed"] for c in self.comparisons)

    def to_dict(self):
        d = {"x0": self.x0, "V_ref": self.V_ref, **self.value.to_dict(),
             "value_matches": self.value_matches, "passed": self.passed,
             "comparisons": self.comparisons}
        if self.mc is not None:
            d.update(dt=self.mc.dt, t_max=self.mc.t_max, seed=self.mc.seed)
        return d


def saddle_check(spec, x0, V_ref, fb, alternatives, cost, mc, grid=None) -> SaddleReport:
    """Check ``J(τ̂,σ) ≤ J(τ̂,σ̂) ≤ J(τ,σ̂)`` for each alternative at 3 standard errors.

    All pairs are evaluated on the same paths; the tolerance uses the paired
    standard error of each difference.
    """
    grid = fb.grid if grid is None else grid
    tau_hat, sigma_hat = saddle_strategies(fb)
    pairs = [(tau_hat, sigma_hat)]
    for alt in alternatives:
        pairs.append((tau_hat, alt) if alt.kind == "sigma" else (alt, sigma_hat))
    batch = evaluate_games(spec, grid, cost, x0, pairs, mc)
    base = batch.estimates[0]
    report = SaddleReport([float(v) for v in np.atleast_1d(x0)], float(V_ref), base, mc=mc)
    for q, alt in enumerate(alternatives, start=1):
        diff, se = batch.paired_difference(q, 0)
        est = batch.estimates[q]
        pooled = math.hypot(est.std_error, base.std_error)
        if alt.kind == "sigma":
            ok = diff <= 3.0 * se + 1e-15
            relation = "J(tau_hat, sigma) <= J(tau_hat, sigma_hat)"
        else:
            ok = diff >= -3.0 * se - 1e-15
            relation = "J(tau, sigma_hat) >= J(tau_hat, sigma_hat)"
        report.comparisons.append({"name": alt.name, "kind": alt.kind, "relation": relation,
                                   "estimate": est.mean, "std_error": est.std_error,
                                   "difference": diff, "paired_std_error": se,
                                   "pooled_std_error": pooled, "passed": bool(ok)})
    return report


# --------------------------------------------------------------------------
# Outer band validation

def validate_bands(spec, grid, cost, cc, mc, samples=5, margin=0.0):
    """Monte Carlo check of the outer band conditions at sample points.

    Below ``A``: ``E[∫_0^{σ_a} e^{-αt}H dt + e^{-ασ_a} M] < -f1(x)``, with
    ``σ_a`` the first entrance into ``{x_n ≥ a}``. Above ``B`` the mirror
    statement with ``-M`` and ``> f2(x)``. Points are taken on the band
    curves themselves and ``samples`` columns spread across x̄.
    """
    pts = grid.points()
    M = float(max(np.max(cost.f1(pts)), np.max(cost.f2(pts))))
    never = StoppingStrategy.never("tau", "never")
    hit_a = StoppingStrategy.above("sigma", cc.a, "hit_a")
    hit_b = StoppingStrategy.below("sigma", cc.b, "hit_b")
    cols = list(np.ndindex(*grid.column_shape)) or [()]
    pick = [cols[i] for i in np.unique(np.linspace(0, len(cols) - 1, samples).round().astype(int))]
    xbar = grid.column_points()
    rows = []
    for col in pick:
        base = list(xbar[col]) if grid.ndim > 1 else []
        for side, level, strat, pay in (("A", cc.A_band[col], hit_a, M), ("B", cc.B_band[col], hit_b, -M)):
            x = np.array(base + [float(level)])
            est = evaluate_games(spec, grid, cost, x, [(never, strat)], mc,
                                 payoff_override={strat.name: pay}).estimates[0]
            if side == "A":
                bound = -float(cost.f1(x[None])[0])
                ok = est.mean + 3 * est.std_error + margin < bound
            else:
                bound = float(cost.f2(x[None])[0])
                ok = est.mean - 3 * est.std_error - margin > bound
            rows.append({"side": side, "point": x.tolist(), "estimate": est.mean,
                         "std_error": est.std_error, "bound": bound, "passed": bool(ok)})
    return rows
