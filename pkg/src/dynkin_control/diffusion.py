"""The uncontrolled diffusion and its finite-difference generator.

The generator is

    ℒu = Σ_i μ_i ∂_i u + Σ_ij A_ij ∂_ij u,    A = ½ σ σᵀ,

discretised with second-order central differences and the 4-corner cross
stencil. Lateral axes use mirror ghosts (Neumann) or wrap (periodic); the
x_n edges either have no stencil (pinned) or a mirror ghost.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import DataError, DomainError, StencilError
from .grid import GridField, GridSpec


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of ``dX = μ(X) dt + σ(X) dB`` and the discount rate.

    Parameters
    ----------
    n : int
        State dimension.
    drift : callable
        Vectorised ``points[..., n] -> μ[..., n]``.
    sigma : callable
        Vectorised ``points[..., n] -> σ[..., n, m]`` with ``m >= n``.
    alpha : float
        Discount rate, strictly positive.
    """

    n: int
    drift: Callable
    sigma: Callable
    alpha: float

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("dimension must be at least 1")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError("alpha must be finite and positive")

    @classmethod
    def constant(cls, mu, sigma, alpha):
        """Constant coefficients; ``sigma`` may be a scalar in one dimension."""
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        n = mu.shape[0]
        sig = np.asarray(sigma, dtype=np.float64)
        if sig.ndim == 0:
            sig = sig * np.eye(n)
        elif sig.ndim == 1:
            sig = np.diag(sig)

        def drift(x):
            x = np.asarray(x, dtype=np.float64)
            return np.broadcast_to(mu, x.shape[:-1] + (n,)).copy()

        def diffusion(x):
            x = np.asarray(x, dtype=np.float64)
            return np.broadcast_to(sig, x.shape[:-1] + sig.shape).copy()

        return cls(n, drift, diffusion, float(alpha))

    def coefficients(self, points):
        """``(μ, A)`` at ``points[..., n]``; raises on non-finite values."""
        pts = np.asarray(points, dtype=np.float64)
        mu = np.asarray(self.drift(pts), dtype=np.float64)
        sig = np.asarray(self.sigma(pts), dtype=np.float64)
        lead = pts.shape[:-1]
        mu = np.broadcast_to(mu, lead + (self.n,))
        if sig.shape[-2] != self.n:
            raise DataError(f"sigma must have {self.n} rows, got {sig.shape[-2]}")
        sig = np.broadcast_to(sig, lead + sig.shape[-2:])
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sig))):
            raise DataError("drift or sigma is not finite on the grid")
        A = 0.5 * np.einsum("...ik,...jk->...ij", sig, sig)
        return np.array(mu), A

    def diffusion_matrix(self, points):
        return self.coefficients(points)[1]


# --------------------------------------------------------------------------
# Stencil plumbing

def _shifted(grid: GridSpec, steps, xn_bc):
    """Flat index of the node displaced by ``steps`` (axis -> ±1); -1 if absent."""
    index = np.indices(grid.shape)
    valid = np.ones(grid.shape, dtype=bool)
    moved = []
    for axis in range(grid.ndim):
        step = steps.get(axis, 0)
        if step == 0:
            moved.append(index[axis])
            continue
        nbr = grid.neighbor_map(axis, step, xn_bc)[index[axis]]
        valid &= nbr >= 0
        moved.append(np.where(nbr >= 0, nbr, 0))
    flat = np.ravel_multi_index(tuple(moved), grid.shape)
    return np.where(valid, flat, -1).ravel()


def stencil_entries(spec: DiffusionSpec, grid: GridSpec, xn_bc="pin"):
    """Coefficient list of ℒ_h as ``(offsets, weights)``.

    ``offsets[k]`` is the flat neighbour index array (``-1`` if absent) and
    ``weights[k]`` the matching per-node weight. The centre node is entry 0.
    """
    mu, A = spec.coefficients(grid.points())
    mu = mu.reshape(-1, grid.ndim)
    A = A.reshape(-1, grid.ndim, grid.ndim)
    h = grid.spacing
    centre = np.arange(grid.size)
    offsets = [centre]
    weights = [np.zeros(grid.size)]
    for i in range(grid.ndim):
        up = _shifted(grid, {i: 1}, xn_bc)
        dn = _shifted(grid, {i: -1}, xn_bc)
        diag = A[:, i, i] / h[i] ** 2
        adv = mu[:, i] / (2.0 * h[i])
        offsets += [up, dn]
        weights += [diag + adv, diag - adv]
        weights[0] = weights[0] - 2.0 * diag
        for j in range(i + 1, grid.ndim):
            c = 2.0 * A[:, i, j] / (4.0 * h[i] * h[j])
            for si, sj, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
                offsets.append(_shifted(grid, {i: si, j: sj}, xn_bc))
                weights.append(sign * c)
    return offsets, weights


def stencil_mask(grid: GridSpec, offsets):
    """Nodes whose full stencil exists."""
    ok = np.ones(grid.size, dtype=bool)
    for off in offsets:
        ok &= off >= 0
    return ok.reshape(grid.shape)


def slave_mask(grid: GridSpec):
    """Duplicate nodes on the closing edge of periodic axes."""
    mask = np.zeros(grid.shape, dtype=bool)
    for axis, periodic in enumerate(grid.periodic):
        if periodic:
            sl = [slice(None)] * grid.ndim
            sl[axis] = -1
            mask[tuple(sl)] = True
    return mask


def sync_periodic(grid: GridSpec, values):
    """Copy master values onto the periodic duplicate nodes (in place)."""
    for axis, periodic in enumerate(grid.periodic):
        if periodic:
            dst = [slice(None)] * grid.ndim
            src = [slice(None)] * grid.ndim
            dst[axis], src[axis] = -1, 0
            values[tuple(dst)] = values[tuple(src)]
    return values


def generator_field(spec: DiffusionSpec, field: GridField, xn_bc="pin") -> np.ndarray:
    """ℒ_h u at every node; NaN where the stencil is incomplete."""
    grid = field.grid
    u = field.values.ravel()
    offsets, weights = stencil_entries(spec, grid, xn_bc)
    out = np.zeros(grid.size)
    ok = np.ones(grid.size, dtype=bool)
    for off, w in zip(offsets, weights):
        ok &= off >= 0
        out += w * u[np.where(off >= 0, off, 0)]
    out[~ok] = np.nan
    return out.reshape(grid.shape)


def generator_matrix(spec: DiffusionSpec, grid: GridSpec, xn_bc="pin"):
    """Sparse ℒ_h (CSR) and the mask of rows that carry a stencil.

    Rows without a full stencil and periodic duplicate rows are left empty.
    """
    offsets, weights = stencil_entries(spec, grid, xn_bc)
    active = (stencil_mask(grid, offsets) & ~slave_mask(grid)).ravel()
    rows = np.flatnonzero(active)
    r = np.concatenate([rows] * len(offsets))
    c = np.concatenate([off[rows] for off in offsets])
    v = np.concatenate([w[rows] for w in weights])
    L = sp.coo_matrix((v, (r, c)), shape=(grid.size, grid.size)).tocsr()
    L.sum_duplicates()
    return L, active.reshape(grid.shape)


# --------------------------------------------------------------------------
# Pointwise operations

def _neighbor(grid: GridSpec, node, steps, xn_bc):
    idx = list(node)
    for axis, step in steps.items():
        nbr = grid.neighbor_map(axis, step, xn_bc)[node[axis]]
        if nbr < 0:
            raise StencilError(f"node {tuple(node)} has no neighbour along axis {axis}")
        idx[axis] = int(nbr)
    return tuple(idx)


def _check_node(grid, node):
    node = tuple(int(k) for k in node)
    if len(node) != grid.ndim or any(not 0 <= k < c for k, c in zip(node, grid.counts)):
        raise StencilError(f"node {node} is outside the grid")
    return node


def apply_generator(spec: DiffusionSpec, field: GridField, node, xn_bc="pin") -> float:
    """ℒ_h u at a single node by central differences.

    Raises
    ------
    StencilError
        The node sits on a pinned x_n edge or outside the grid.
    DataError
        A stencil value is not finite.
    """
    grid = field.grid
    node = _check_node(grid, node)
    u = field.values
    h = grid.spacing
    x = np.array([grid.lower[i] + node[i] * h[i] for i in range(grid.ndim)])
    mu, A = spec.coefficients(x)

    def val(steps):
        v = u[_neighbor(grid, node, steps, xn_bc)]
        if not np.isfinite(v):
            raise DataError(f"non-finite field value near node {node}")
        return v

    u0 = val({})
    total = 0.0
    for i in range(grid.ndim):
        up, dn = val({i: 1}), val({i: -1})
        total += mu[i] * (up - dn) / (2.0 * h[i])
        total += A[i, i] * (up - 2.0 * u0 + dn) / h[i] ** 2
        for j in range(i + 1, grid.ndim):
            cross = (val({i: 1, j: 1}) - val({i: 1, j: -1})
                     - val({i: -1, j: 1}) + val({i: -1, j: -1})) / (4.0 * h[i] * h[j])
            total += 2.0 * A[i, j] * cross
    return float(total)


def density_residual(spec: DiffusionSpec, rho: GridField, node, xn_bc="pin") -> np.ndarray:
    """``A∇ρ − ρ(μ − b)`` at a node, with ``b_i = Σ_j ∂_j A_ij``.

    ∇ρ and the divergence of A use central differences; A is sampled at the
    exact shifted coordinates so ``b`` needs no grid field.
    """
    grid = rho.grid
    node = _check_node(grid, node)
    h = grid.spacing
    r0 = rho.values[node]
    if not r0 > 0:
        raise DomainError(f"density must be positive, got {r0} at node {node}")
    x = np.array([grid.lower[i] + node[i] * h[i] for i in range(grid.ndim)])
    mu, A = spec.coefficients(x)
    grad = np.empty(grid.ndim)
    b = np.zeros(grid.ndim)
    for j in range(grid.ndim):
        up = rho.values[_neighbor(grid, node, {j: 1}, xn_bc)]
        dn = rho.values[_neighbor(grid, node, {j: -1}, xn_bc)]
        grad[j] = (up - dn) / (2.0 * h[j])
        e = np.zeros(grid.ndim)
        e[j] = h[j]
        Ap = spec.diffusion_matrix(x + e)
        Am = spec.diffusion_matrix(x - e)
        b += (Ap[:, j] - Am[:, j]) / (2.0 * h[j])
    return A @ grad - r0 * (mu - b)


@dataclass(frozen=True)
class EllipticityReport:
    min_eigenvalue: float
    node: tuple
    eps: float

    @property
    def passed(self):
        return self.min_eigenvalue > self.eps

    def to_dict(self):
        return {"min_eigenvalue": self.min_eigenvalue, "node": list(self.node),
                "eps": self.eps, "passed": self.passed}


def check_nondegenerate(spec: DiffusionSpec, grid: GridSpec, eps=1e-10) -> EllipticityReport:
    """Smallest eigenvalue of A over the grid nodes."""
    _, A = spec.coefficients(grid.points())
    eig = np.linalg.eigvalsh(A)[..., 0]
    k = int(np.argmin(eig))
    node = tuple(int(v) for v in np.unravel_index(k, grid.shape))
    return EllipticityReport(float(eig.ravel()[k]), node, float(eps))
