"""Data, viscosity and coarea losses with analytic gradients.

Each loss returns its scalar value and, when ``buf`` is given, adds
``weight * dloss/df`` into it. ``normalization`` overrides the divisor (the
number of evaluated samples by default) so partial sums over chunks add up to
the full loss.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import grid as G

__all__ = [
    "LossConfig",
    "LossReport",
    "Batch",
    "psi_beta",
    "phi_beta",
    "data_loss",
    "viscosity_loss",
    "viscosity_residual",
    "coarea_loss",
    "total_loss",
    "default_threads",
]

THREADS_ENV = "GRIDSDF_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class LossConfig:
    lambda_p: float = 0.1
    lambda_n: float = 1e-5
    lambda_v: float = 1e-4
    lambda_c: float = 1e-6
    epsilon: float = 1e-2
    beta: float = 1e-2

    def validate(self) -> "LossConfig":
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        if self.lambda_c > 0 and self.beta <= 0:
            raise ValueError("beta must be positive when the coarea loss is enabled")
        return self


@dataclass
class LossReport:
    total: float
    data_point: float
    data_normal: float
    viscosity: float
    coarea: float
    n_points: int = 0
    n_nodes: int = 0
    n_voxels: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Flat voxel ids, interior node ids and point indices for one iteration."""

    voxels: np.ndarray
    nodes: np.ndarray
    points: np.ndarray


def _check_beta(beta):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")


def psi_beta(s, beta):
    """Centered Laplace CDF."""
    _check_beta(beta)
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(-np.abs(s) / beta)
    out = np.where(s <= 0, 0.5 * e, 1.0 - 0.5 * e)
    return out[()] if out.ndim == 0 else out


def phi_beta(s, beta):
    """Laplace PDF, the derivative of :func:`psi_beta`."""
    _check_beta(beta)
    s = np.asarray(s, dtype=np.float64)
    out = np.exp(-np.abs(s) / beta) / (2.0 * beta)
    return out[()] if out.ndim == 0 else out


def data_loss(grid, positions, normals=None, cfg: LossConfig | None = None, buf=None,
              normalization=None):
    """Mean squared value at the points and mean squared normal mismatch.

    Returns ``(point_term, normal_term)``; ``normal_term`` is 0 without
    normals. Gradients are weighted by ``cfg.lambda_p`` and ``cfg.lambda_n``.
    """
    q = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(q) == 0:
        raise ValueError("empty point set")
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite point coordinates")
    m = len(q) if normalization is None else normalization
    cfg = cfg or LossConfig()

    idx, w, dw = G.point_stencil(grid, q, grad=normals is not None)
    vals = grid.values[idx]
    f = np.sum(w * vals, axis=1)
    point_term = float(np.sum(f * f) / m)
    deposit = None
    if buf is not None and cfg.lambda_p != 0:
        deposit = w * ((2.0 * cfg.lambda_p / m) * f)[:, None]

    normal_term = 0.0
    if normals is not None:
        n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if n.shape != q.shape:
            raise ValueError("normals must align with positions")
        if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-6):
            raise ValueError("normals must be unit length")
        d = np.sum(dw * vals[:, :, None], axis=1) - n
        normal_term = float(np.sum(d * d) / m)
        if buf is not None and cfg.lambda_n != 0:
            dn = np.einsum("ncd,nd->nc", dw, (2.0 * cfg.lambda_n / m) * d)
            deposit = dn if deposit is None else deposit + dn
    if deposit is not None:
        G.scatter_add(buf, idx, deposit)
    return point_term, normal_term


def viscosity_residual(grad, lap, f, epsilon):
    """Per-node residual ``(|grad| - 1) sign(f) - epsilon * lap``."""
    gn = np.linalg.norm(grad, axis=-1)
    return (gn - 1.0) * np.sign(f) - epsilon * lap


def viscosity_loss(grid, nodes, epsilon, buf=None, weight=1.0, normalization=None):
    """Mean squared viscosity residual over interior ``nodes`` (flat ids)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    n_norm = nodes.size if normalization is None else normalization

    idx = G.node_stencil(grid, nodes)
    vals = grid.values[idx]
    g = G.stencil_grad(grid, vals)
    lap = G.stencil_laplacian(grid, vals)
    sgn = np.sign(vals[0])
    gn = np.sqrt(np.sum(g * g, axis=1))
    r = (gn - 1.0) * sgn - epsilon * lap
    loss = float(np.sum(r * r) / n_norm)

    if buf is not None and weight != 0:
        dr = (2.0 * weight / n_norm) * r
        # Subgradient 0 at a vanishing gradient; sign(f) is held constant.
        scale = np.divide(dr * sgn, gn, out=np.zeros_like(gn), where=gn > 0)
        coef = G.grad_stencil_coefficients(grid, g * scale[:, None])
        if epsilon != 0:
            coef += G.laplacian_stencil_coefficients(grid, -epsilon * dr)
        G.scatter_add(buf, idx, coef)
    return loss


def coarea_loss(grid, voxels, beta, buf=None, weight=1.0, normalization=None):
    """Mean of ``phi_beta(-f(w)) * |grad f(w)|`` over voxel centers ``w``.

    Pass ``normalization=grid.n_voxels`` to read the result as a surface area.
    """
    voxels = np.asarray(voxels, dtype=np.int64)
    if voxels.size == 0:
        raise ValueError("empty voxel set")
    _check_beta(beta)
    n_norm = voxels.size if normalization is None else normalization

    idx = G.voxel_stencil(grid, voxels)
    vals = grid.values[idx]
    C = G.center_coefficients(grid)
    c = np.sum(0.125 * vals, axis=1)
    g = G.center_grad_from_values(grid, vals)
    gn = np.sqrt(np.sum(g * g, axis=1))
    phi = phi_beta(-c, beta)
    loss = float(np.sum(phi * gn) / n_norm)

    if buf is not None and weight != 0:
        s = weight / n_norm
        # d/dc of phi(-c) is -sign(c) / beta * phi(-c); norm subgradient 0 at 0.
        dc = s * (-np.sign(c) / beta) * phi * gn
        gscale = np.divide(s * phi, gn, out=np.zeros_like(gn), where=gn > 0)
        coef = (g * gscale[:, None]) @ C.T + 0.125 * dc[:, None]
        G.scatter_add(buf, idx, coef)
    return loss


def _split(a, parts):
    return np.array_split(np.asarray(a), parts) if parts > 1 else [np.asarray(a)]


def total_loss(grid, active, batch: Batch, cloud, cfg: LossConfig, threads=None):
    """Weighted sum of all losses on one batch.

    ``cloud`` is anything with ``positions`` and ``normals`` attributes.
    Returns ``(LossReport, grad_buffer)`` with inactive nodes zeroed.
    With ``threads > 1`` work is split into contiguous chunks, each
    accumulating into a private buffer; buffers merge in chunk order.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    pts = np.asarray(batch.points, dtype=np.int64)
    q = cloud.positions[pts]
    nrm = None if cloud.normals is None else cloud.normals[pts]
    n_pts, n_nodes, n_vox = len(pts), len(batch.nodes), len(batch.voxels)

    def work(chunk):
        pidx, nodes, voxels = chunk
        buf = grid.zeros_like()
        dp = dn = v = c = 0.0
        if len(pidx):
            dp, dn = data_loss(grid, q[pidx], None if nrm is None else nrm[pidx],
                               cfg, buf, normalization=n_pts)
        if len(nodes):
            v = viscosity_loss(grid, nodes, cfg.epsilon, buf, cfg.lambda_v,
                               normalization=n_nodes)
        if len(voxels) and cfg.beta > 0:
            c = coarea_loss(grid, voxels, cfg.beta, buf, cfg.lambda_c,
                            normalization=n_vox)
        return np.array([dp, dn, v, c]), buf

    chunks = list(zip(_split(np.arange(n_pts), threads),
                      _split(batch.nodes, threads),
                      _split(batch.voxels, threads)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(chunks[0])]

    parts, buf = results[0]
    parts = parts.copy()
    for p, b in results[1:]:
        parts += p
        buf += b
    buf[~active.node_mask] = 0.0

    dp, dn, v, c = (float(x) for x in parts)
    total = cfg.lambda_p * dp + cfg.lambda_n * dn + cfg.lambda_v * v + cfg.lambda_c * c
    report = LossReport(total=float(total), data_point=dp, data_normal=dn, viscosity=v,
                        coarea=c, n_points=n_pts, n_nodes=n_nodes, n_voxels=n_vox)
    return report, buf
