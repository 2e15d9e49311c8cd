"""Euler–Maruyama stepping shared by the Monte Carlo engines.

Coefficients are tabulated on the solve grid and interpolated multilinearly
inside the compiled kernels; periodic lateral axes wrap and the remaining
coordinates are clamped to the box.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .diffusion import DiffusionSpec
from .grid import GridField, GridSpec, interp_scalar, interp_vector
from .rng import normal


@dataclass
class CoefficientTable:
    """Flattened grid samples of μ, σ and any scalar fields a kernel needs."""

    grid: GridSpec
    n: int
    m: int
    mu: np.ndarray
    sigma: np.ndarray
    constant: bool

    @classmethod
    def build(cls, spec: DiffusionSpec, grid: GridSpec):
        pts = grid.points()
        mu = np.broadcast_to(np.asarray(spec.drift(pts), dtype=np.float64), grid.shape + (spec.n,))
        sig = np.asarray(spec.sigma(pts), dtype=np.float64)
        sig = np.broadcast_to(sig, grid.shape + sig.shape[-2:])
        m = sig.shape[-1]
        mu = np.ascontiguousarray(mu).ravel()
        sig = np.ascontiguousarray(sig).ravel()
        constant = bool(np.all(mu.reshape(-1, spec.n) == mu[:spec.n])
                        and np.all(sig.reshape(-1, spec.n * m) == sig[:spec.n * m]))
        return cls(grid, spec.n, m, mu, sig, constant)

    def kernel_args(self):
        lo, h, c, p = self.grid.geometry()
        return self.mu, self.sigma, self.n, self.m, self.constant, lo, h, c, p


def field_table(values):
    if isinstance(values, GridField):
        values = values.values
    return np.ascontiguousarray(values, dtype=np.float64).ravel()


@njit(cache=True, inline="always")
def draw_increments(key, step, m, sqdt, dw):
    """Brownian increments of ``step`` (normals ``step·m … step·m+m-1``)."""
    for j in range(m):
        dw[j] = sqdt * normal(key, step * m + j)


@njit(cache=True, inline="always")
def euler_update(x, dw, dt, mu_t, sig_t, n, m, const, lo, hs, cs, per, mu_buf, sig_buf, out):
    """Euler–Maruyama update from ``x`` into ``out`` for given increments ``dw``."""
    if const:
        for i in range(n):
            out[i] = x[i] + mu_t[i] * dt
        for j in range(m):
            for i in range(n):
                out[i] += sig_t[i * m + j] * dw[j]
    else:
        interp_vector(mu_t, n, x, lo, hs, cs, per, mu_buf)
        interp_vector(sig_t, n * m, x, lo, hs, cs, per, sig_buf)
        for i in range(n):
            out[i] = x[i] + mu_buf[i] * dt
        for j in range(m):
            for i in range(n):
                out[i] += sig_buf[i * m + j] * dw[j]


@njit(cache=True, inline="always")
def euler_step(x, key, step, dt, sqdt, mu_t, sig_t, n, m, const, lo, hs, cs, per, mu_buf, sig_buf, out):
    """One Euler–Maruyama step from ``x`` into ``out`` using normals ``step·m … step·m+m-1``."""
    if const:
        for i in range(n):
            mu_buf[i] = mu_t[i]
        for k in range(n * m):
            sig_buf[k] = sig_t[k]
    else:
        interp_vector(mu_t, n, x, lo, hs, cs, per, mu_buf)
        interp_vector(sig_t, n * m, x, lo, hs, cs, per, sig_buf)
    for i in range(n):
        out[i] = x[i] + mu_buf[i] * dt
    for j in range(m):
        dw = sqdt * normal(key, step * m + j)
        for i in range(n):
            out[i] += sig_buf[i * m + j] * dw


@njit(cache=True, inline="always")
def field_at(table, x, lo, hs, cs, per):
    """Scalar field at ``x``, continued linearly in x_n beyond the box."""
    return interp_scalar(table, x, lo, hs, cs, per, True)


@njit(cache=True, inline="always")
def column_value(curve, x, lo, hs, cs, per, base=0):
    """Curve height at the lateral coordinates ``x[:-1]``.

    ``base`` selects one curve from a flat stack of them.
    """
    return interp_scalar(curve, x, lo, hs, cs, per, False, cs.shape[0] - 1, base)
