"""Singular control value W, its source h, and reflected-diffusion costs.

``W(x̄, y) = ∫_ã^y V(x̄, u) du`` and ``h(x̄, y) = ∫_ã^y H(x̄, u) du + C(x̄)``
with ``C`` fixed by ``αW − ℒW − h → 0`` as ``y ↓ ã``. A band policy keeps
``x_n`` inside ``[β(x̄), γ(x̄)]`` by minimal pushes ``A⁽¹⁾`` (up, priced by
``f1``) and ``A⁽²⁾`` (down, priced by ``f2``).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .diffusion import DiffusionSpec, generator_field
from .errors import DataError, GeometryError, ParameterError
from .free_boundary import FreeBoundary
from .game import GameEstimate, MonteCarloParams
from .grid import (GridField, GridSpec, as_column_array, cumulative_from, interpolate, interpolate_columns,
                   lerp_extend)
from .paths import CoefficientTable, column_value, draw_increments, euler_update, field_at, field_table
from .rng import normal, path_key
from .vi_solver import CostSpec, Region


@dataclass
class ValueW:
    W: GridField
    h: GridField
    C: np.ndarray


def _first_above(y, base):
    """Index of the first node strictly above ``base`` (per column)."""
    return np.searchsorted(y, base, side="right")


def build_w(V: GridField, fb: FreeBoundary) -> GridField:
    """Cumulative trapezoid of V in x_n from ã, so that W(x̄, ã) = 0."""
    if V.grid != fb.grid:
        raise DataError("V and the free boundary live on different grids")
    return GridField(V.grid, cumulative_from(V.values, V.grid.xn, fb.a_tilde))


def build_h(V: GridField, H: GridField, fb: FreeBoundary, spec: DiffusionSpec, xn_bc="pin",
            labels=None) -> ValueW:
    """``h = ∫_ã^y H + C`` with C from the limit condition at the first layer above ã.

    Parameters
    ----------
    labels : ndarray of int8, optional
        Region labels of the obstacle solution. When given, the layer is the
        first continuation node above ã, so that a discrete contact node
        sitting just above the localized ã is skipped.

    Returns
    -------
    ValueW
        ``W`` (from :func:`build_w`), ``h`` and ``C`` per column.
    """
    grid = V.grid
    y = grid.xn
    W = build_w(V, fb)
    j1 = _first_above(y, fb.a_tilde)
    if labels is not None:
        contact = np.where(labels == Region.E1, np.arange(len(y)), -1).max(axis=-1)
        j1 = np.maximum(j1, contact + 1)
    if np.any(j1 >= len(y) - 1):
        raise GeometryError("free boundary has no interior layer above it")
    LW = generator_field(spec, W, xn_bc)
    IH = cumulative_from(H.values, y, fb.a_tilde)
    q = spec.alpha * W.values - LW - IH
    C = np.take_along_axis(q, np.asarray(j1)[..., None], axis=-1)[..., 0]
    if not np.all(np.isfinite(C)):
        raise GeometryError("first layer above the free boundary has no stencil")
    return ValueW(W, GridField(grid, IH + C[..., None]), np.asarray(C))


def c_adjacent_jump(C, periodic=()) -> float:
    """Largest ``|ΔC|`` between neighbouring columns along any lateral axis."""
    C = np.atleast_1d(np.asarray(C, dtype=np.float64))
    if C.size < 2:
        return 0.0
    worst = 0.0
    for ax in range(C.ndim):
        if C.shape[ax] < 2:
            continue
        d = np.diff(C, axis=ax)
        if ax < len(periodic) and periodic[ax]:
            d = np.concatenate([d, C.take([0], axis=ax) - C.take([-1], axis=ax)], axis=ax)
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


# --------------------------------------------------------------------------
# Region checks

@dataclass
class HJBReport:
    tol: float
    in_band_max: float
    out_band_max: float
    out_band_nodes: int
    slope_violation: float
    smooth_fit_lower: float
    smooth_fit_upper: float
    smooth_fit_tol: float
    jump_lower: float
    jump_upper: float
    C_edge_gradient: list = field(default_factory=list)

    @property
    def out_band_negative(self):
        return self.out_band_max < 0

    @property
    def passed(self):
        return (self.in_band_max <= self.tol and self.out_band_max < self.tol
                and self.slope_violation <= self.tol
                and max(self.smooth_fit_lower, self.smooth_fit_upper) <= self.smooth_fit_tol)

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "tol", "in_band_max", "out_band_max", "out_band_nodes", "out_band_negative",
            "slope_violation", "smooth_fit_lower", "smooth_fit_upper", "smooth_fit_tol",
            "jump_lower", "jump_upper", "C_edge_gradient", "passed")}


def hjb_residual_w(vw: ValueW, spec: DiffusionSpec, xn_bc="pin"):
    """``αW − ℒ_hW − h`` on the grid (NaN without stencil)."""
    return spec.alpha * vw.W.values - generator_field(spec, vw.W, xn_bc) - vw.h.values


def _interp_at(y, values, heights):
    out = np.empty(np.shape(heights))
    for col in np.ndindex(*np.shape(heights)):
        out[col] = np.interp(heights[col], y, values[col])
    return out


def hjb_region_check(vw: ValueW, fb: FreeBoundary, spec: DiffusionSpec, tol=1e-6,
                     cost: CostSpec = None, xn_bc="pin", fit_factor=5.0) -> HJBReport:
    """Sign pattern of ``αW − ℒW − h`` and the gradient conditions on W.

    In the band (more than 2h from both boundaries) the residual must lie in
    ``[-tol, tol]``; outside it must stay below ``tol`` (the report also says
    whether it is strictly negative). ``∂W/∂x_n`` must lie in
    ``[-f1 - tol, f2 + tol]``. Smooth fit compares ``∂²W/∂x_n∂x_k`` on ã and
    b̃ with ``-∂f1/∂x_k`` and ``∂f2/∂x_k`` and passes below ``fit_factor·h``.
    """
    grid = vw.W.grid
    y = grid.xn
    h = grid.spacing[-1]
    r = hjb_residual_w(vw, spec, xn_bc)
    a = fb.a_tilde[..., None]
    b = fb.b_tilde[..., None]
    Y = np.broadcast_to(y, grid.shape)
    inside = (Y > a + 2 * h) & (Y < b - 2 * h) & np.isfinite(r)
    outside = ((Y < a - 2 * h) | (Y > b + 2 * h)) & np.isfinite(r)
    in_max = float(np.max(np.abs(r[inside]))) if inside.any() else 0.0
    out_max = float(np.max(r[outside])) if outside.any() else -np.inf

    pts = grid.points()
    f1 = cost.f1(pts) if cost is not None else None
    f2 = cost.f2(pts) if cost is not None else None
    dW = np.gradient(vw.W.values, h, axis=-1)
    slope_violation = 0.0
    if cost is not None:
        slope_violation = float(max(np.max(-f1 - dW), np.max(dW - f2), 0.0))

    # mixed derivatives of W along the boundaries
    fit_low = fit_high = 0.0
    for k in range(grid.ndim):
        d2 = np.gradient(dW, grid.spacing[k], axis=k) if grid.counts[k] > 2 else None
        if d2 is None:
            continue
        lowd = _interp_at(y, d2, fb.a_tilde)
        highd = _interp_at(y, d2, fb.b_tilde)
        if cost is not None:
            g1 = cost.gradient(1, _boundary_points(grid, fb.a_tilde), grid.ndim)[..., k]
            g2 = cost.gradient(2, _boundary_points(grid, fb.b_tilde), grid.ndim)[..., k]
        else:
            g1 = g2 = 0.0
        fit_low = max(fit_low, float(np.max(np.abs(lowd + g1))))
        fit_high = max(fit_high, float(np.max(np.abs(highd - g2))))

    jump_low = _boundary_jump(y, r, fb.a_tilde)
    jump_high = _boundary_jump(y, r, fb.b_tilde)

    edge = []
    if grid.ndim > 1:
        for axis in range(grid.ndim - 1):
            if grid.periodic[axis]:
                continue
            hk = grid.spacing[axis]
            first = np.take(vw.C, 1, axis=axis) - np.take(vw.C, 0, axis=axis)
            last = np.take(vw.C, -1, axis=axis) - np.take(vw.C, -2, axis=axis)
            edge.append({"axis": axis, "lower_edge": float(np.max(np.abs(first)) / hk),
                         "upper_edge": float(np.max(np.abs(last)) / hk)})
    return HJBReport(float(tol), in_max, out_max, int(outside.sum()), slope_violation,
                     fit_low, fit_high, fit_factor * h, jump_low, jump_high, edge)


def _boundary_points(grid, heights):
    if grid.ndim == 1:
        return np.atleast_1d(heights)[..., None].reshape(1, 1)
    return np.concatenate([grid.column_points(), np.asarray(heights)[..., None]], axis=-1)


def _boundary_jump(y, r, heights):
    """Largest change of the residual between the nodes on either side of a boundary."""
    worst = 0.0
    for col in np.ndindex(*np.shape(heights)):
        j = int(np.searchsorted(y, heights[col]))
        lo, hi = j - 1, j
        if lo < 0 or hi >= len(y):
            continue
        rc = r[col]
        if np.isfinite(rc[lo]) and np.isfinite(rc[hi]):
            worst = max(worst, abs(rc[hi] - rc[lo]))
    return worst


# --------------------------------------------------------------------------
# Bands and the reflected diffusion

@dataclass
class Band:
    """Reflection interval ``[β(x̄), γ(x̄)]`` in x_n."""

    beta: object
    gamma: object
    name: str = "band"

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if np.any(np.broadcast_to(self.beta, np.broadcast_shapes(self.beta.shape, self.gamma.shape))
                  >= self.gamma):
            raise GeometryError(f"band {self.name!r} is empty or inverted")

    @classmethod
    def from_free_boundary(cls, fb: FreeBoundary, name="optimal"):
        return cls(fb.a_tilde.copy(), fb.b_tilde.copy(), name)

    def widened(self, d, name=None):
        return Band(self.beta - d, self.gamma + d, name or f"widen_{d:g}")

    def narrowed(self, d, name=None):
        return Band(self.beta + d, self.gamma - d, name or f"narrow_{d:g}")

    def translated(self, d, name=None):
        return Band(self.beta + d, self.gamma + d, name or f"shift_{d:+g}")


def default_perturbations(opt: Band):
    """Five perturbed bands: widen/narrow by 0.25 and 0.5, plus a translation."""
    return [opt.widened(0.25), opt.widened(0.5), opt.narrowed(0.25), opt.narrowed(0.5),
            opt.translated(0.3)]


@dataclass
class ControlledPathStats:
    """Discounted cost components of one controlled path."""

    holding_cost: float
    control_cost_cont: float
    jump_cost: float
    A1_total: float
    A2_total: float

    @property
    def total(self):
        return self.holding_cost + self.control_cost_cont + self.jump_cost


def _jump_integral(fn, base, start, stop, pieces=256):
    """``∫_start^stop f(x̄, y) dy`` by composite Simpson on a fixed partition."""
    if stop <= start:
        return 0.0
    t = np.linspace(start, stop, 2 * pieces + 1)
    pts = np.column_stack([np.broadcast_to(base, (len(t), len(base))), t])
    vals = fn(pts)
    from scipy.integrate import simpson
    return float(simpson(vals, x=t))


def simulate_reflected(spec: DiffusionSpec, band: Band, x0, dt, t_max, seed, grid: GridSpec = None,
                       cost: CostSpec = None, h=None, path=0):
    """One reflected path by Euler steps followed by projection onto the band.

    Returns ``(t, x, dA1, dA2, stats)``: time grid, states after projection,
    per-step push increments (index 0 holds the initial jump) and the path's
    discounted cost components when ``cost`` and ``h`` are given (``h`` is a
    vectorised callable or a :class:`GridField`).
    """
    if not (dt > 0 and t_max >= dt):
        raise ParameterError("need dt > 0 and t_max >= dt")
    steps = int(round(t_max / dt))
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    n = spec.n

    def level(curve, point):
        if curve.ndim == 0 or grid is None:
            return float(curve)
        return float(interpolate_columns(grid, curve, point[:-1][None])[0])

    x = np.empty((steps + 1, n))
    dA1 = np.zeros(steps + 1)
    dA2 = np.zeros(steps + 1)
    x[0] = x0
    lo, hi = level(band.beta, x0), level(band.gamma, x0)
    if lo >= hi:
        raise GeometryError("band is empty at the start column")
    if x0[-1] < lo:
        dA1[0] = lo - x0[-1]
    elif x0[-1] > hi:
        dA2[0] = x0[-1] - hi
    x[0, -1] = min(max(x0[-1], lo), hi)
    key = np.uint64(path_key(np.uint64(seed), np.uint64(path)))
    sq = math.sqrt(dt)
    for k in range(steps):
        mu, _ = spec.coefficients(x[k])
        sig = np.asarray(spec.sigma(x[k]), dtype=np.float64)
        m = sig.shape[-1]
        dw = sq * np.array([normal(key, k * m + j) for j in range(m)])
        nxt = x[k] + mu * dt + sig @ dw
        lo, hi = level(band.beta, nxt), level(band.gamma, nxt)
        if lo >= hi:
            raise GeometryError(f"band is empty at a visited column (step {k + 1})")
        if nxt[-1] < lo:
            dA1[k + 1] = lo - nxt[-1]
            nxt[-1] = lo
        elif nxt[-1] > hi:
            dA2[k + 1] = nxt[-1] - hi
            nxt[-1] = hi
        x[k + 1] = nxt
    t = np.arange(steps + 1) * dt
    stats = None
    if cost is not None and h is not None:
        hv = h(x) if callable(h) and not isinstance(h, GridField) else interpolate(h.grid, h.values, x, True)
        disc = np.exp(-spec.alpha * t)
        holding = float(np.sum(0.5 * dt * (disc[:-1] * hv[:-1] + disc[1:] * hv[1:])))
        cont = float(np.sum(disc[1:] * (cost.f1(x[1:]) * dA1[1:] + cost.f2(x[1:]) * dA2[1:])))
        jump = (_jump_integral(cost.f1, x0[:-1], x0[-1], x0[-1] + dA1[0])
                + _jump_integral(cost.f2, x0[:-1], x0[-1] - dA2[0], x0[-1]))
        stats = ControlledPathStats(holding, cont, jump, float(dA1.sum()), float(dA2.sum()))
    return t, x, dA1, dA2, stats


@njit(cache=True)
def _control_kernel(seed, first_path, n_paths, x0, dt, n_steps, alpha,
                    mu_t, sig_t, n, m, const, lo, hs, cs, per,
                    h_t, f1_t, f2_t, betas, gammas, ncol, jump_costs, out, status):
    """Reflected paths for several bands driven by the same noise.

    ``betas``/``gammas`` stack the band curves (``ncol`` values each).
    ``out[b, p, :]`` = holding, continuous control, jump, A1 total, A2 total.
    """
    nb = jump_costs.shape[0]
    sqdt = np.sqrt(dt)
    decay = np.exp(-alpha * dt)
    mu_buf = np.empty(n)
    sig_buf = np.empty(n * m)
    xs = np.empty(nb * n)
    cur = np.empty(n)
    nxt = np.empty(n)
    dw = np.empty(m)
    h_prev = np.empty(nb)
    acc = np.empty((nb, 5))
    for p in range(n_paths):
        key = path_key(seed, first_path + p)
        for b in range(nb):
            lo_b = column_value(betas, x0, lo, hs, cs, per, b * ncol)
            hi_b = column_value(gammas, x0, lo, hs, cs, per, b * ncol)
            for i in range(n):
                cur[i] = x0[i]
            acc[b, 3] = 0.0
            acc[b, 4] = 0.0
            if x0[n - 1] < lo_b:
                acc[b, 3] = lo_b - x0[n - 1]
                cur[n - 1] = lo_b
            elif x0[n - 1] > hi_b:
                acc[b, 4] = x0[n - 1] - hi_b
                cur[n - 1] = hi_b
            acc[b, 0] = 0.0
            acc[b, 1] = 0.0
            acc[b, 2] = jump_costs[b]
            for i in range(n):
                xs[b * n + i] = cur[i]
            h_prev[b] = field_at(h_t, cur, lo, hs, cs, per)
        disc = 1.0
        for step in range(n_steps):
            disc1 = disc * decay
            draw_increments(key, step, m, sqdt, dw)
            for b in range(nb):
                for i in range(n):
                    cur[i] = xs[b * n + i]
                euler_update(cur, dw, dt, mu_t, sig_t, n, m, const, lo, hs, cs, per,
                             mu_buf, sig_buf, nxt)
                ok = True
                for i in range(n):
                    if not np.isfinite(nxt[i]):
                        ok = False
                if not ok:
                    status[p] = step + 1
                    break
                lo_b = column_value(betas, nxt, lo, hs, cs, per, b * ncol)
                hi_b = column_value(gammas, nxt, lo, hs, cs, per, b * ncol)
                if lo_b >= hi_b:
                    status[p] = -(step + 1)
                    break
                y = nxt[n - 1]
                if y < lo_b:
                    nxt[n - 1] = lo_b
                    d = lo_b - y
                    acc[b, 1] += disc1 * field_at(f1_t, nxt, lo, hs, cs, per) * d
                    acc[b, 3] += d
                elif y > hi_b:
                    nxt[n - 1] = hi_b
                    d = y - hi_b
                    acc[b, 1] += disc1 * field_at(f2_t, nxt, lo, hs, cs, per) * d
                    acc[b, 4] += d
                for i in range(n):
                    xs[b * n + i] = nxt[i]
                h_now = field_at(h_t, nxt, lo, hs, cs, per)
                acc[b, 0] += 0.5 * dt * (disc * h_prev[b] + disc1 * h_now)
                h_prev[b] = h_now
            if status[p] != 0:
                break
            disc = disc1
        for b in range(nb):
            for k in range(5):
                out[b, p, k] = acc[b, k]


@njit(cache=True)
def _control_kernel_1d(seed, first_path, n_paths, x0, dt, n_steps, alpha, mu, sig, y0, hy, count,
                       h_t, f1_t, f2_t, betas, gammas, jump_costs, out):
    """Scalar-state version of :func:`_control_kernel` for one axis and constant coefficients."""
    nb = jump_costs.shape[0]
    sqdt = np.sqrt(dt)
    decay = np.exp(-alpha * dt)
    ys = np.empty(nb)
    h_prev = np.empty(nb)
    acc = np.empty((nb, 5))
    for p in range(n_paths):
        key = path_key(seed, first_path + p)
        for b in range(nb):
            y = x0
            acc[b, 3] = 0.0
            acc[b, 4] = 0.0
            if y < betas[b]:
                acc[b, 3] = betas[b] - y
                y = betas[b]
            elif y > gammas[b]:
                acc[b, 4] = y - gammas[b]
                y = gammas[b]
            acc[b, 0] = 0.0
            acc[b, 1] = 0.0
            acc[b, 2] = jump_costs[b]
            ys[b] = y
            h_prev[b] = lerp_extend(h_t, y, y0, hy, count)
        disc = 1.0
        for step in range(n_steps):
            disc1 = disc * decay
            dw = sqdt * normal(key, step)
            for b in range(nb):
                y = ys[b] + mu * dt
                y += sig * dw
                if y < betas[b]:
                    d = betas[b] - y
                    y = betas[b]
                    acc[b, 1] += disc1 * lerp_extend(f1_t, y, y0, hy, count) * d
                    acc[b, 3] += d
                elif y > gammas[b]:
                    d = y - gammas[b]
                    y = gammas[b]
                    acc[b, 1] += disc1 * lerp_extend(f2_t, y, y0, hy, count) * d
                    acc[b, 4] += d
                ys[b] = y
                h_now = lerp_extend(h_t, y, y0, hy, count)
                acc[b, 0] += 0.5 * dt * (disc * h_prev[b] + disc1 * h_now)
                h_prev[b] = h_now
            disc = disc1
        for b in range(nb):
            for k in range(5):
                out[b, p, k] = acc[b, k]


@dataclass
class ControlEnsemble:
    bands: list
    components: np.ndarray      # (bands, paths, 5)
    mc: MonteCarloParams
    alpha: float
    h_sup: float
    M: float

    def stats(self, b, p):
        return ControlledPathStats(*(float(v) for v in self.components[b, p]))

    def totals(self, b):
        return self.components[b, :, 0] + self.components[b, :, 1] + self.components[b, :, 2]

    def estimates(self):
        return [evaluate_cost(self, b) for b in range(len(self.bands))]

    def verify(self, W_x0, x0, optimal_index=0):
        return verification_report(W_x0, [b.name for b in self.bands], self.estimates(), x0, self.mc,
                                   optimal_index)


def simulate_ensemble(spec: DiffusionSpec, grid: GridSpec, cost: CostSpec, h: GridField, bands, x0,
                      mc: MonteCarloParams, first_path=0, fast=True) -> ControlEnsemble:
    """Reflected-path ensemble for every band on common noise.

    One-axis problems with constant coefficients use a scalar kernel
    (``fast=False`` forces the general one; both give identical numbers).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    ncol = max(int(np.prod(grid.column_shape)), 1)
    betas = np.stack([as_column_array(grid, b.beta).reshape(ncol) for b in bands])
    gammas = np.stack([as_column_array(grid, b.gamma).reshape(ncol) for b in bands])
    if np.any(betas >= gammas):
        bad = bands[int(np.flatnonzero(np.any(betas >= gammas, axis=1))[0])]
        raise GeometryError(f"band {bad.name!r} is empty or inverted")
    jumps = np.zeros(len(bands))
    base = x0[:-1]
    for k, b in enumerate(bands):
        lo_b = float(interpolate_columns(grid, as_column_array(grid, b.beta), base[None])[0]) \
            if grid.ndim > 1 else float(b.beta)
        hi_b = float(interpolate_columns(grid, as_column_array(grid, b.gamma), base[None])[0]) \
            if grid.ndim > 1 else float(b.gamma)
        jumps[k] = (_jump_integral(cost.f1, base, x0[-1], lo_b)
                    + _jump_integral(cost.f2, base, hi_b, x0[-1]))
    coeff = CoefficientTable.build(spec, grid)
    pts = grid.points()
    f1_t = field_table(np.broadcast_to(cost.f1(pts), grid.shape))
    f2_t = field_table(np.broadcast_to(cost.f2(pts), grid.shape))
    h_t = field_table(h)
    out = np.zeros((len(bands), mc.paths, 5))
    status = np.zeros(mc.paths, dtype=np.int64)
    if fast and grid.ndim == 1 and coeff.constant:
        # bands are fixed levels and the state never leaves them, so no blow-up check
        _control_kernel_1d(np.uint64(mc.seed), np.int64(first_path), mc.paths, float(x0[0]), float(mc.dt),
                           mc.steps, float(spec.alpha), float(coeff.mu[0]), float(coeff.sigma[0]),
                           float(grid.lower[0]), float(grid.spacing[0]), int(grid.counts[0]),
                           h_t, f1_t, f2_t, betas[:, 0].copy(), gammas[:, 0].copy(), jumps, out)
    else:
        _control_kernel(np.uint64(mc.seed), np.int64(first_path), mc.paths, x0, float(mc.dt), mc.steps,
                        float(spec.alpha), *coeff.kernel_args(), h_t, f1_t, f2_t,
                        np.ascontiguousarray(betas).ravel(), np.ascontiguousarray(gammas).ravel(), ncol,
                        jumps, out, status)
    if np.any(status > 0):
        from .errors import BlowUpError
        raise BlowUpError(int(status[status > 0][0]))
    if np.any(status < 0):
        raise GeometryError(f"band is empty at a visited column (step {int(-status[status < 0][0])})")
    M = float(max(np.max(np.abs(f1_t)), np.max(np.abs(f2_t))))
    return ControlEnsemble(list(bands), out, mc, float(spec.alpha), float(np.max(np.abs(h_t))), M)


def evaluate_cost(ensemble: ControlEnsemble, b=0) -> GameEstimate:
    """Mean discounted cost of band ``b`` with standard error.

    The truncation bound covers the neglected tail of the holding cost,
    ``sup|h| e^{-αT}/α``.
    """
    tot = ensemble.totals(b)
    n = tot.shape[0]
    mean = math.fsum(tot) / n
    se = math.sqrt(math.fsum((tot - mean) ** 2) / (n - 1) / n) if n > 1 else 0.0
    tail = math.exp(-ensemble.alpha * ensemble.mc.t_max)
    return GameEstimate(mean, se, n, ensemble.h_sup * tail / ensemble.alpha, 0.0, 0)


# --------------------------------------------------------------------------
# Verification table

def value_at(vw: ValueW, fb: FreeBoundary, cost: CostSpec, x):
    """W at a point, continued outside the grid box by the obstacle integrals.

    Below the box ``W(x̄, y) = W(x̄, y_lo) + ∫_y^{y_lo} f1`` (slope −f1);
    above it ``W(x̄, y) = W(x̄, y_hi) + ∫_{y_hi}^y f2`` (slope f2).
    """
    grid = vw.W.grid
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ylo, yhi = grid.lower[-1], grid.upper[-1]
    clamp = x.copy()
    clamp[-1] = min(max(x[-1], ylo), yhi)
    w = float(interpolate(grid, vw.W.values, clamp[None])[0])
    if x[-1] < ylo:
        w += _jump_integral(cost.f1, x[:-1], x[-1], ylo)
    elif x[-1] > yhi:
        w += _jump_integral(cost.f2, x[:-1], yhi, x[-1])
    return w


@dataclass
class VerificationRow:
    policy: str
    estimate: float
    std_error: float
    excess: float
    passed: bool
    equality: bool
    optimal: bool

    def to_dict(self):
        return {"policy": self.policy, "k_hat": self.estimate, "std_error": self.std_error,
                "k_hat_minus_W": self.excess, "pass": self.passed, "equality": self.equality,
                "optimal": self.optimal}


@dataclass
class VerificationReport:
    W_x0: float
    x0: list
    rows: list
    mc: MonteCarloParams
    truncation_bias_bound: float

    @property
    def passed(self):
        return all(r.passed and (r.equality or not r.optimal) for r in self.rows)

    def to_dict(self):
        return {"W_x0": self.W_x0, "x0": self.x0, "passed": self.passed,
                "truncation_bias_bound": self.truncation_bias_bound,
                **self.mc.to_dict(), "rows": [r.to_dict() for r in self.rows]}

    def to_text(self):
        head = ("policy", "k_hat", "SE", "k_hat - W", "pass", "equality")
        body = [(r.policy, f"{r.estimate:.6f}", f"{r.std_error:.6f}", f"{r.excess:+.6f}",
                 "yes" if r.passed else "no", "yes" if r.equality else "no") for r in self.rows]
        widths = [max(len(str(c)) for c in col) for col in zip(head, *body)]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in (head, *body)]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def verification_report(W_x0, names, estimates, x0, mc: MonteCarloParams, optimal_index=0) -> VerificationReport:
    """Compare each band's estimated cost with ``W(x0)``.

    A row passes when ``k̂ − W(x0) ≥ −3SE``; ``equality`` records
    ``|k̂ − W(x0)| ≤ 3SE``, which the optimal band must also satisfy.
    """
    rows = []
    for b, (name, est) in enumerate(zip(names, estimates)):
        excess = est.mean - W_x0
        rows.append(VerificationRow(name, est.mean, est.std_error, excess,
                                    bool(excess >= -3 * est.std_error),
                                    bool(abs(excess) <= 3 * est.std_error), b == optimal_index))
    tail = max(e.truncation_bias_bound for e in estimates)
    return VerificationReport(float(W_x0), [float(v) for v in np.atleast_1d(x0)], rows, mc, tail)
