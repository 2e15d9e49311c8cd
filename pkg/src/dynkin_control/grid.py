"""Rectangular grids and scalar fields on them.

The last axis of every grid is the controlled coordinate ``x_n``; the leading
axes are the lateral coordinates ``x̄``. A lateral axis is either ``neumann``
(mirror ghost node) or ``periodic``. On a periodic axis the last node is the
same point as the first one (``upper - lower`` is the period), and field values
are kept equal there.
"""
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError, DataError

LATERAL_BCS = ("neumann", "periodic")
XN_BCS = ("pin", "neumann")


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned tensor grid.

    Parameters
    ----------
    lower, upper : sequence of float
        Box corners, one entry per axis.
    counts : sequence of int
        Nodes per axis (endpoints included), at least 3.
    lateral_bc : sequence of str
        One of ``"neumann"``/``"periodic"`` for each of the first ``n - 1``
        axes. Defaults to Neumann everywhere.
    """

    lower: tuple
    upper: tuple
    counts: tuple
    lateral_bc: tuple = field(default=())

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)) or not lower:
            raise ConfigurationError("lower, upper and counts must have one entry per axis",
                                     field="grid")
        n = len(lower)
        bcs = tuple(self.lateral_bc) if self.lateral_bc else ("neumann",) * (n - 1)
        if len(bcs) != n - 1:
            raise ConfigurationError(f"expected {n - 1} lateral boundary conditions, got {len(bcs)}",
                                     field="grid.lateral_bc")
        for bc in bcs:
            if bc not in LATERAL_BCS:
                raise ConfigurationError(f"unknown lateral boundary condition {bc!r}",
                                         field="grid.lateral_bc")
        for lo, hi, c in zip(lower, upper, counts):
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise ConfigurationError("need finite lower < upper on every axis", field="grid")
            if c < 3:
                raise ConfigurationError("need at least 3 nodes per axis", field="grid.counts")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "lateral_bc", bcs)

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def column_shape(self):
        """Shape of the lateral (x̄) node lattice; ``()`` in one dimension."""
        return self.counts[:-1]

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def spacing(self):
        return tuple((hi - lo) / (c - 1) for lo, hi, c in zip(self.lower, self.upper, self.counts))

    @property
    def periodic(self):
        return tuple(bc == "periodic" for bc in self.lateral_bc) + (False,)

    def axis(self, i):
        return np.linspace(self.lower[i], self.upper[i], self.counts[i])

    @property
    def axes(self):
        return [self.axis(i) for i in range(self.ndim)]

    @property
    def xn(self):
        return self.axis(self.ndim - 1)

    def points(self):
        """Node coordinates, shape ``counts + (n,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def column_points(self):
        """Lateral node coordinates, shape ``column_shape + (n - 1,)``."""
        if self.ndim == 1:
            return np.zeros((0,))
        mesh = np.meshgrid(*self.axes[:-1], indexing="ij")
        return np.stack(mesh, axis=-1)

    def neighbor_map(self, axis, step, xn_bc="pin"):
        """Index of the ``step`` (±1) neighbour of every node along ``axis``.

        ``xn_bc`` is ``"pin"``/``"neumann"`` or a ``(bottom, top)`` pair.
        Returns an integer array of length ``counts[axis]``; ``-1`` marks a
        missing neighbour (pinned x_n edge).
        """
        count = self.counts[axis]
        idx = np.arange(count) + step
        if axis < self.ndim - 1 and self.lateral_bc[axis] == "periodic":
            return np.mod(idx, count - 1)
        if axis < self.ndim - 1:
            bottom = top = "neumann"
        else:
            bottom, top = split_xn_bc(xn_bc)
        bc = bottom if step < 0 else top
        if bc == "neumann":
            idx[idx < 0] = 1
            idx[idx >= count] = count - 2
        else:
            idx[(idx < 0) | (idx >= count)] = -1
        return idx

    def geometry(self):
        """Packed arrays for the compiled interpolation kernels."""
        return (np.asarray(self.lower, dtype=np.float64),
                np.asarray(self.spacing, dtype=np.float64),
                np.asarray(self.counts, dtype=np.int64),
                np.asarray(self.periodic, dtype=np.bool_))

    def lateral_geometry(self):
        lo, h, c, p = self.geometry()
        return lo[:-1].copy(), h[:-1].copy(), c[:-1].copy(), p[:-1].copy()


def split_xn_bc(xn_bc):
    """Normalise an x_n boundary condition into a ``(bottom, top)`` pair."""
    pair = (xn_bc, xn_bc) if isinstance(xn_bc, str) else tuple(xn_bc)
    if len(pair) != 2 or any(bc not in XN_BCS for bc in pair):
        raise ConfigurationError(f"unknown x_n boundary condition {xn_bc!r}")
    return pair


@dataclass
class GridField:
    """One scalar per grid node."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.grid.size:
            raise DataError(f"field has {values.size} values, grid has {self.grid.size} nodes")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise DataError("field contains non-finite values")
        self.values = values

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]):
        """Sample a vectorised function ``fn(points[..., n]) -> values[...]``."""
        vals = np.broadcast_to(np.asarray(fn(grid.points()), dtype=np.float64), grid.shape)
        return cls(grid, np.array(vals))

    @classmethod
    def constant(cls, grid: GridSpec, value: float):
        return cls(grid, np.full(grid.shape, float(value)))

    def copy(self):
        return GridField(self.grid, self.values.copy())

    def __call__(self, points):
        """Multilinear interpolation at ``points[..., n]``."""
        return interpolate(self.grid, self.values, points)


def interpolate(grid: GridSpec, values: np.ndarray, points, extend_last=False) -> np.ndarray:
    """Multilinear interpolation of node values at ``points[..., n]``."""
    pts = np.asarray(points, dtype=np.float64)
    flat = np.ascontiguousarray(pts.reshape(-1, grid.ndim))
    lo, h, c, p = grid.geometry()
    table = np.ascontiguousarray(values, dtype=np.float64).ravel()
    out = np.empty(flat.shape[0])
    for k in range(flat.shape[0]):
        out[k] = interp_scalar(table, flat[k], lo, h, c, p, extend_last)
    return out.reshape(pts.shape[:-1])


def interpolate_columns(grid: GridSpec, curve: np.ndarray, xbar) -> np.ndarray:
    """Interpolate a per-column curve at lateral coordinates ``xbar[..., n-1]``."""
    curve = np.asarray(curve, dtype=np.float64)
    if grid.ndim == 1:
        return np.broadcast_to(curve.reshape(()), np.shape(xbar)[:-1] if np.ndim(xbar) else ()).copy()
    pts = np.asarray(xbar, dtype=np.float64)
    flat = np.ascontiguousarray(pts.reshape(-1, grid.ndim - 1))
    lo, h, c, p = grid.lateral_geometry()
    table = np.ascontiguousarray(curve).ravel()
    out = np.empty(flat.shape[0])
    for k in range(flat.shape[0]):
        out[k] = interp_scalar(table, flat[k], lo, h, c, p, False)
    return out.reshape(pts.shape[:-1])


@njit(cache=True, inline="always")
def _locate(x, lower, spacing, count, periodic, extend):
    """Cell index and fractional offset of ``x`` along one axis."""
    t = (x - lower) / spacing
    top = count - 1
    if periodic:
        t = t - np.floor(t / top) * top
    if not extend:
        if t < 0.0:
            t = 0.0
        elif t > top:
            t = float(top)
    j = int(np.floor(t))
    if j > top - 1:
        j = top - 1
    elif j < 0:
        j = 0
    return j, t - j


@njit(cache=True, inline="always")
def interp_scalar(table, x, lower, spacing, counts, periodic, extend_last=False, axes=-1, base=0):
    """Multilinear interpolation of a C-ordered flattened table.

    Periodic axes wrap; other axes clamp to the box (constant extension),
    except that ``extend_last`` continues the last axis linearly from its
    edge cell. ``axes >= 0`` restricts the lookup to the leading axes, which
    avoids slicing the geometry arrays for lateral curves; ``base`` offsets
    into a table holding several stacked fields. Works for zero axes
    (returns ``table[base]``). Allocation free, so it is cheap inside path
    loops.
    """
    d = counts.shape[0] if axes < 0 else axes
    if d == 1:
        j, f = _locate(x[0], lower[0], spacing[0], counts[0], periodic[0], extend_last)
        return (1.0 - f) * table[base + j] + f * table[base + j + 1]
    total = 0.0
    for corner in range(1 << d):
        w = 1.0
        off = 0
        stride = 1
        for i in range(d - 1, -1, -1):
            ext = extend_last if i == d - 1 else False
            j, f = _locate(x[i], lower[i], spacing[i], counts[i], periodic[i], ext)
            if (corner >> i) & 1:
                w *= f
                off += (j + 1) * stride
            else:
                w *= 1.0 - f
                off += j * stride
            stride *= counts[i]
        if w != 0.0:
            total += w * table[base + off]
    return total


@njit(cache=True, inline="always")
def lerp_extend(table, y, lower, spacing, count):
    """1-D linear interpolation continued linearly past both ends.

    Same arithmetic as :func:`interp_scalar` with ``extend_last`` on a single
    non-periodic axis, but with scalar geometry (cheaper in tight loops).
    """
    t = (y - lower) / spacing
    j = int(np.floor(t))
    if j > count - 2:
        j = count - 2
    elif j < 0:
        j = 0
    f = t - j
    return (1.0 - f) * table[j] + f * table[j + 1]


@njit(cache=True, inline="always")
def interp_vector(table, ncomp, x, lower, spacing, counts, periodic, out):
    """Multilinear interpolation of a table with ``ncomp`` values per node."""
    d = counts.shape[0]
    for c in range(ncomp):
        out[c] = 0.0
    for corner in range(1 << d):
        w = 1.0
        off = 0
        stride = 1
        for i in range(d - 1, -1, -1):
            j, f = _locate(x[i], lower[i], spacing[i], counts[i], periodic[i], False)
            if (corner >> i) & 1:
                w *= f
                off += (j + 1) * stride
            else:
                w *= 1.0 - f
                off += j * stride
            stride *= counts[i]
        if w != 0.0:
            for c in range(ncomp):
                out[c] += w * table[off * ncomp + c]


def cumulative_from(values: np.ndarray, y: np.ndarray, base) -> np.ndarray:
    """``∫_base^{y_k} v`` along the last axis for every node ``k``.

    ``v`` is treated as piecewise linear in ``y`` (trapezoid rule), including
    the partial cell that contains ``base``. ``base`` broadcasts against
    ``values.shape[:-1]``.
    """
    from scipy.integrate import cumulative_trapezoid

    values = np.asarray(values, dtype=np.float64)
    h = y[1] - y[0]
    running = cumulative_trapezoid(values, dx=h, axis=-1, initial=0.0)
    base = np.broadcast_to(np.asarray(base, dtype=np.float64), values.shape[:-1])
    j = np.clip(np.floor((base - y[0]) / h).astype(np.int64), 0, len(y) - 2)
    yj = y[0] + j * h
    theta = (base - yj) / h
    vj = np.take_along_axis(values, j[..., None], axis=-1)[..., 0]
    vj1 = np.take_along_axis(values, (j + 1)[..., None], axis=-1)[..., 0]
    vbase = (1.0 - theta) * vj + theta * vj1
    ij = np.take_along_axis(running, j[..., None], axis=-1)[..., 0]
    at_base = ij + (base - yj) * 0.5 * (vj + vbase)
    return running - at_base[..., None]


def as_column_array(grid: GridSpec, value) -> np.ndarray:
    """Broadcast a scalar or per-column array to ``grid.column_shape``."""
    arr = np.asarray(value, dtype=np.float64)
    return np.array(np.broadcast_to(arr, grid.column_shape))


def column_function(grid: GridSpec, fn: Callable, *, default=None) -> np.ndarray:
    """Evaluate ``fn(xbar[..., n-1])`` on the lateral lattice."""
    if grid.ndim == 1:
        return np.asarray(fn(np.zeros((0,))), dtype=np.float64).reshape(())
    return np.asarray(fn(grid.column_points()), dtype=np.float64)


def node_coordinates(grid: GridSpec, node: Sequence[int]) -> np.ndarray:
    return np.array([grid.lower[i] + node[i] * grid.spacing[i] for i in range(grid.ndim)])
