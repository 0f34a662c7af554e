"""Scalar field on a regular lattice over the unit cube.

Nodes are indexed ``(i, j, k)`` with ``i, j, k in 0..res`` and stored in a flat
float64 array with ``k`` varying fastest, so ``flat = (i * R + j) * R + k`` with
``R = res + 1``. Voxels are indexed the same way with ``res`` in place of ``R``.

Every forward operator here is linear in the node values; the matching
``*_adjoint`` functions scatter ``upstream`` times the operator coefficients
into a gradient buffer (a flat array shaped like ``grid.values``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "DomainError",
    "StencilError",
    "ScalarGrid",
    "ActiveSet",
    "CORNERS",
    "eval_at",
    "grad_at",
    "center_grad",
    "node_grad",
    "node_laplacian",
    "eval_adjoint",
    "grad_at_adjoint",
    "center_grad_adjoint",
    "node_grad_adjoint",
    "node_laplacian_adjoint",
    "center_value",
    "center_value_adjoint",
    "point_stencil",
    "voxel_stencil",
    "node_stencil",
    "scatter_add",
    "upsample",
    "prune",
    "save_grid",
    "load_grid",
]

SNAPSHOT_MAGIC = b"VSCG"
SNAPSHOT_VERSION = 1

# (a, b, c) offsets of the 8 voxel corners; a is the x offset.
CORNERS = np.array(
    [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
)
# +1 for the corner at the positive end of an axis, -1 otherwise.
_CORNER_SIGNS = (2 * CORNERS - 1).astype(np.float64)


class DomainError(ValueError):
    """Query point or index outside the grid domain."""


class StencilError(ValueError):
    """Finite-difference stencil requested at a boundary node."""


@dataclass
class ScalarGrid:
    res: int
    values: np.ndarray = None

    def __post_init__(self):
        if int(self.res) != self.res or self.res < 1:
            raise ValueError(f"res must be a positive integer, got {self.res!r}")
        self.res = int(self.res)
        n = (self.res + 1) ** 3
        if self.values is None:
            self.values = np.zeros(n)
        else:
            self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
            if self.values.size != n:
                raise ValueError(
                    f"expected {n} node values for res={self.res}, got {self.values.size}"
                )

    @classmethod
    def from_function(cls, res, fn):
        """Sample ``fn(x, y, z)`` (vectorized) at every node."""
        g = cls(res)
        x, y, z = g.node_coords().T
        g.values[:] = np.broadcast_to(fn(x, y, z), x.shape)
        return g

    @property
    def h(self) -> float:
        return 1.0 / self.res

    @property
    def n_nodes(self) -> int:
        return (self.res + 1) ** 3

    @property
    def n_voxels(self) -> int:
        return self.res**3

    @property
    def strides(self) -> tuple[int, int, int]:
        R = self.res + 1
        return (R * R, R, 1)

    @property
    def field(self) -> np.ndarray:
        """``(R, R, R)`` view of the node values."""
        R = self.res + 1
        return self.values.reshape(R, R, R)

    def copy(self) -> "ScalarGrid":
        return ScalarGrid(self.res, self.values.copy())

    def zeros_like(self) -> np.ndarray:
        """Fresh gradient buffer."""
        return np.zeros_like(self.values)

    def node_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        R = self.res + 1
        return (ijk[..., 0] * R + ijk[..., 1]) * R + ijk[..., 2]

    def node_ijk(self, flat) -> np.ndarray:
        R = self.res + 1
        flat = np.asarray(flat, dtype=np.int64)
        return np.stack([flat // (R * R), (flat // R) % R, flat % R], axis=-1)

    def voxel_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        n = self.res
        return (ijk[..., 0] * n + ijk[..., 1]) * n + ijk[..., 2]

    def voxel_ijk(self, flat) -> np.ndarray:
        n = self.res
        flat = np.asarray(flat, dtype=np.int64)
        return np.stack([flat // (n * n), (flat // n) % n, flat % n], axis=-1)

    def node_coords(self, flat=None) -> np.ndarray:
        if flat is None:
            flat = np.arange(self.n_nodes)
        return self.node_ijk(flat) * self.h

    def voxel_centers(self, flat=None) -> np.ndarray:
        if flat is None:
            flat = np.arange(self.n_voxels)
        return (self.voxel_ijk(flat) + 0.5) * self.h

    def corner_offsets(self) -> np.ndarray:
        """Flat-index offsets of the 8 corners relative to a voxel's base node."""
        return CORNERS @ np.array(self.strides, dtype=np.int64)

    def voxel_base_nodes(self, voxels) -> np.ndarray:
        """Flat node index of the (0, 0, 0) corner of each flat voxel index."""
        return self.node_index(self.voxel_ijk(voxels))

    def interior_mask(self) -> np.ndarray:
        """Boolean flat mask of nodes with all six axis neighbours (read-only)."""
        return _interior(self.res)


@dataclass
class ActiveSet:
    """Voxels kept for optimization and the nodes they touch.

    ``voxels`` and ``nodes`` are sorted flat indices; the masks are flat
    booleans over all voxels / nodes.
    """

    res: int
    voxel_mask: np.ndarray
    node_mask: np.ndarray = field(default=None)
    voxels: np.ndarray = field(init=False)
    nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.res
        self.voxel_mask = np.asarray(self.voxel_mask, dtype=bool).ravel()
        if self.voxel_mask.size != n**3:
            raise ValueError("voxel mask size does not match res")
        self.node_mask = _corner_dilate(self.voxel_mask.reshape(n, n, n)).ravel()
        self.voxels = np.flatnonzero(self.voxel_mask)
        self.nodes = np.flatnonzero(self.node_mask)

    @classmethod
    def full(cls, res) -> "ActiveSet":
        return cls(res, np.ones(res**3, dtype=bool))

    @property
    def n_voxels(self) -> int:
        return int(self.voxels.size)

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.size)

    def __le__(self, other: "ActiveSet") -> bool:
        return bool(np.all(other.voxel_mask[self.voxel_mask]))


def _corner_dilate(vmask):
    n = vmask.shape[0]
    out = np.zeros((n + 1,) * 3, dtype=bool)
    for a, b, c in CORNERS:
        out[a : a + n, b : b + n, c : c + n] |= vmask
    return out


def _as_points(grid, p):
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 3:
        raise DomainError(f"points must have shape (n, 3), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError("non-finite point coordinates")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("point outside the unit cube")
    return p, single


def _locate(grid, p):
    """Owning voxel (lower index on shared faces) and local coords in [0, 1]."""
    u = p * grid.res
    ijk = np.ceil(u).astype(np.int64) - 1
    np.clip(ijk, 0, grid.res - 1, out=ijk)
    t = u - ijk
    base = grid.node_index(ijk)
    return base, t


def _trilinear(t):
    """Per-axis linear factors (n, 8) for each corner."""
    one_minus = 1.0 - t
    sel = CORNERS.astype(bool)
    wx = np.where(sel[:, 0], t[:, None, 0], one_minus[:, None, 0])
    wy = np.where(sel[:, 1], t[:, None, 1], one_minus[:, None, 1])
    wz = np.where(sel[:, 2], t[:, None, 2], one_minus[:, None, 2])
    return wx, wy, wz


def point_stencil(grid, p, grad=True):
    """Corner node ids (n, 8), trilinear weights (n, 8) and, with ``grad``,
    the spatial gradients of the weights (n, 8, 3)."""
    p, _ = _as_points(grid, p)
    base, t = _locate(grid, p)
    wx, wy, wz = _trilinear(t)
    idx = base[:, None] + grid.corner_offsets()[None, :]
    w = wx * wy * wz
    if not grad:
        return idx, w, None
    s = _CORNER_SIGNS * grid.res
    dw = np.empty(w.shape + (3,))
    dw[..., 0] = s[:, 0] * wy * wz
    dw[..., 1] = s[:, 1] * wx * wz
    dw[..., 2] = s[:, 2] * wx * wy
    return idx, w, dw


def eval_at(grid: ScalarGrid, p):
    """Trilinear interpolation at point(s) ``p``."""
    single = np.ndim(p) == 1
    idx, w, _ = point_stencil(grid, p, grad=False)
    out = np.sum(w * grid.values[idx], axis=1)
    return out[0] if single else out


def grad_at(grid: ScalarGrid, p):
    """Exact gradient of the trilinear interpolant inside the owning voxel."""
    single = np.ndim(p) == 1
    p, _ = _as_points(grid, p)
    base, t = _locate(grid, p)
    wx, wy, wz = _trilinear(t)
    vals = grid.values[base[:, None] + grid.corner_offsets()[None, :]]
    out = _grad_from_diffs(grid, vals, (wy * wz)[:, _LOWER[0]], (wx * wz)[:, _LOWER[1]],
                           (wx * wy)[:, _LOWER[2]])
    return out[0] if single else out


# Corners on the lower face of each axis, and their partners across it.
_LOWER = tuple(np.flatnonzero(CORNERS[:, a] == 0) for a in range(3))
_UPPER = tuple(np.flatnonzero(CORNERS[:, a] == 1) for a in range(3))


def axis_differences(vals):
    """Per-axis corner differences ``(n, 4)`` across each pair of opposite faces.

    Differencing before weighting makes the gradient of a constant field
    exactly zero, which the norm subgradients in the losses rely on.
    """
    return tuple(vals[:, _UPPER[a]] - vals[:, _LOWER[a]] for a in range(3))


def _grad_from_diffs(grid, vals, wx, wy, wz):
    d = axis_differences(vals)
    return np.stack([np.sum(w * da, axis=1) for w, da in zip((wx, wy, wz), d)], axis=1) * grid.res


def _as_voxels(grid, voxels):
    v = np.asarray(voxels, dtype=np.int64)
    single = v.shape == (3,)
    if single:
        v = v[None]
    if v.ndim == 2:
        if v.shape[1] != 3:
            raise DomainError(f"voxel indices must have shape (n, 3), got {v.shape}")
        if np.any(v < 0) or np.any(v >= grid.res):
            raise DomainError("voxel index out of range")
        v = grid.voxel_index(v)
    else:
        v = np.atleast_1d(v)
        if v.size and (v.min() < 0 or v.max() >= grid.n_voxels):
            raise DomainError("voxel index out of range")
    return v, single


def voxel_stencil(grid, voxels):
    """Corner node ids (n, 8) of the given voxels."""
    v, _ = _as_voxels(grid, voxels)
    return grid.voxel_base_nodes(v)[:, None] + grid.corner_offsets()[None, :]


def center_coefficients(grid):
    """(8, 3) weights of the corner values in the voxel-center gradient."""
    # Same arithmetic as point_stencil at t = 0.5, so both agree bit for bit.
    return _CORNER_SIGNS * grid.res * 0.25


def center_grad(grid: ScalarGrid, voxels):
    """Gradient at voxel centers; ``voxels`` is an (i, j, k) triple, (n, 3) or flat ids."""
    single = np.shape(voxels) == (3,)
    out = center_grad_from_values(grid, grid.values[voxel_stencil(grid, voxels)])
    return out[0] if single else out


def center_grad_from_values(grid, vals):
    """Center gradient from corner values (n, 8); bit-identical to ``grad_at``."""
    q = np.full((len(vals), 4), 0.25)
    return _grad_from_diffs(grid, vals, q, q, q)


def center_value(grid: ScalarGrid, voxels):
    """Interpolated value at voxel centers (mean of the 8 corners)."""
    single = np.shape(voxels) == (3,)
    idx = voxel_stencil(grid, voxels)
    out = np.sum(0.125 * grid.values[idx], axis=1)
    return out[0] if single else out


@lru_cache(maxsize=4)
def _interior(res):
    R = res + 1
    m = np.zeros((R, R, R), dtype=bool)
    m[1:-1, 1:-1, 1:-1] = True
    m.flags.writeable = False
    return m.ravel()


def _as_nodes(grid, nodes):
    n = np.asarray(nodes, dtype=np.int64)
    single = n.shape == (3,)
    if single:
        n = n[None]
    if n.ndim == 2:
        if n.shape[1] != 3:
            raise DomainError(f"node indices must have shape (n, 3), got {n.shape}")
        if np.any(n < 1) or np.any(n > grid.res - 1):
            raise StencilError("stencil requires interior nodes (1..res-1 on every axis)")
        return grid.node_index(n), single
    n = np.atleast_1d(n)
    if n.size and (n.min() < 0 or n.max() >= grid.n_nodes):
        raise DomainError("node index out of range")
    if not np.all(_interior(grid.res)[n]):
        raise StencilError("stencil requires interior nodes (1..res-1 on every axis)")
    return n, single


def node_stencil(grid, nodes):
    """Node ids (7, n): center, then the +x, -x, +y, -y, +z, -z neighbours."""
    n, _ = _as_nodes(grid, nodes)
    sx, sy, sz = grid.strides
    return np.array([0, sx, -sx, sy, -sy, sz, -sz], dtype=np.int64)[:, None] + n[None, :]


def stencil_grad(grid, vals):
    """Central differences (n, 3) from (7, n) stencil values."""
    half_inv_h = 0.5 * grid.res
    return np.stack([vals[1] - vals[2], vals[3] - vals[4], vals[5] - vals[6]], axis=1) * half_inv_h


def stencil_laplacian(grid, vals):
    c = 2.0 * vals[0]
    return ((vals[1] - c + vals[2]) + (vals[3] - c + vals[4])
            + (vals[5] - c + vals[6])) * float(grid.res) ** 2


def node_grad(grid: ScalarGrid, nodes):
    """Central-difference gradient at interior nodes."""
    single = np.shape(nodes) == (3,)
    out = stencil_grad(grid, grid.values[node_stencil(grid, nodes)])
    return out[0] if single else out


def node_laplacian(grid: ScalarGrid, nodes):
    """Seven-point Laplacian at interior nodes."""
    single = np.shape(nodes) == (3,)
    out = stencil_laplacian(grid, grid.values[node_stencil(grid, nodes)])
    return out[0] if single else out


def grad_stencil_coefficients(grid, upstream):
    """(7, n) deposit of ``upstream . node_grad`` onto the stencil nodes."""
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 3).T * (0.5 * grid.res)
    coef = np.empty((7, up.shape[1]))
    coef[0] = 0.0
    coef[1::2] = up
    coef[2::2] = -up
    return coef


def laplacian_stencil_coefficients(grid, upstream):
    """(7, n) deposit of ``upstream * node_laplacian`` onto the stencil nodes."""
    c = np.asarray(upstream, dtype=np.float64).reshape(-1) * float(grid.res) ** 2
    coef = np.broadcast_to(c, (7, len(c))).copy()
    coef[0] = -6.0 * c
    return coef


def scatter_add(buf, idx, vals):
    """``buf[idx] += vals`` with repeated indices accumulated in order."""
    np.add.at(buf, idx.ravel(), vals.ravel())


def eval_adjoint(grid, p, upstream, buf):
    idx, w, _ = point_stencil(grid, p, grad=False)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (len(idx),))
    scatter_add(buf, idx, w * up[:, None])


def grad_at_adjoint(grid, p, upstream, buf):
    idx, _, dw = point_stencil(grid, p)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (len(idx), 3))
    scatter_add(buf, idx, np.einsum("ncd,nd->nc", dw, up))


def center_grad_adjoint(grid, voxels, upstream, buf):
    idx = voxel_stencil(grid, voxels)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (len(idx), 3))
    scatter_add(buf, idx, up @ center_coefficients(grid).T)


def center_value_adjoint(grid, voxels, upstream, buf):
    idx = voxel_stencil(grid, voxels)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (len(idx),))
    scatter_add(buf, idx, np.repeat(0.125 * up[:, None], 8, axis=1))


def node_grad_adjoint(grid, nodes, upstream, buf):
    idx = node_stencil(grid, nodes)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (idx.shape[1], 3))
    scatter_add(buf, idx, grad_stencil_coefficients(grid, up))


def node_laplacian_adjoint(grid, nodes, upstream, buf):
    idx = node_stencil(grid, nodes)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (idx.shape[1],))
    scatter_add(buf, idx, laplacian_stencil_coefficients(grid, up))


def _upsample_axis(a, axis):
    a = np.moveaxis(a, axis, 0)
    out = np.empty((2 * a.shape[0] - 1,) + a.shape[1:])
    out[0::2] = a
    out[1::2] = 0.5 * (a[:-1] + a[1:])
    return np.moveaxis(out, 0, axis)


def upsample(grid: ScalarGrid) -> ScalarGrid:
    """Double the resolution, filling new nodes by trilinear interpolation."""
    f = grid.field
    for axis in range(3):
        f = _upsample_axis(f, axis)
    return ScalarGrid(2 * grid.res, np.ascontiguousarray(f).ravel())


def prune(grid: ScalarGrid, t: float) -> ActiveSet:
    """Keep voxels with at least one corner value in ``[-t, t]``."""
    if not t > 0:
        raise ValueError(f"prune threshold must be positive, got {t}")
    near = np.abs(grid.field) <= t
    n = grid.res
    vmask = np.zeros((n, n, n), dtype=bool)
    for a, b, c in CORNERS:
        vmask |= near[a : a + n, b : b + n, c : c + n]
    return ActiveSet(n, vmask.ravel())


def save_grid(grid: ScalarGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, grid.res))
        fh.write(grid.values.astype("<f8").tobytes())


def load_grid(path) -> ScalarGrid:
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a grid snapshot (bad magic)")
    version, res = struct.unpack_from("<II", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    values = np.frombuffer(data, dtype="<f8", offset=12)
    if values.size != (res + 1) ** 3:
        raise ValueError(f"{path}: truncated snapshot")
    return ScalarGrid(res, values.astype(np.float64))
