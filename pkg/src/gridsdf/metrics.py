"""Distances and scores between reconstructed meshes and point sets."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "MetricReport",
    "sample_mesh",
    "nearest",
    "chamfer_hausdorff",
    "f_score",
    "normal_consistency",
    "evaluate",
]


def sample_mesh(mesh, k, rng=None):
    """``k`` area-uniform surface samples and their face normals."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    if k < 1:
        raise ValueError("sample count must be at least 1")
    rng = np.random.default_rng(rng)
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=k, p=areas / areas.sum())
    u, v = rng.random(k), rng.random(k)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return pts, mesh.face_normals()[tri]


def nearest(query, ref):
    """Distance and index of the nearest ``ref`` point for every ``query`` point.

    Distances are recomputed from the matched points so they equal a
    brute-force evaluation bit for bit.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    if len(query) == 0 or len(ref) == 0:
        raise ValueError("point sets must be nonempty")
    _, idx = cKDTree(ref).query(query)
    d = np.sqrt(((query - ref[idx]) ** 2).sum(axis=1))
    return d, idx


def chamfer_hausdorff(a, b):
    """``(d_C, d_H, d_C one-sided a->b, d_H one-sided a->b)``."""
    dab, _ = nearest(a, b)
    dba, _ = nearest(b, a)
    c_ab, c_ba = float(dab.mean()), float(dba.mean())
    h_ab, h_ba = float(dab.max()), float(dba.max())
    return 0.5 * (c_ab + c_ba), max(h_ab, h_ba), c_ab, h_ab


def f_score(recon, gt, tau):
    """Harmonic mean of precision and recall at threshold ``tau``, in percent."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    d_rg, _ = nearest(recon, gt)
    d_gr, _ = nearest(gt, recon)
    p = float(np.mean(d_rg <= tau))
    r = float(np.mean(d_gr <= tau))
    return 0.0 if p + r == 0 else 200.0 * p * r / (p + r)


def normal_consistency(recon_pts, recon_nrm, gt_pts, gt_nrm):
    """Mean absolute cosine between nearest-neighbour normals, both directions, x100."""
    if recon_nrm is None or gt_nrm is None:
        raise ValueError("normal consistency needs normals on both sets")
    _, i_rg = nearest(recon_pts, gt_pts)
    _, i_gr = nearest(gt_pts, recon_pts)
    recon_nrm, gt_nrm = np.asarray(recon_nrm), np.asarray(gt_nrm)
    c1 = np.abs(np.sum(recon_nrm * gt_nrm[i_rg], axis=1)).mean()
    c2 = np.abs(np.sum(gt_nrm * recon_nrm[i_gr], axis=1)).mean()
    return float(50.0 * (c1 + c2))


@dataclass
class MetricReport:
    d_C: float
    d_H: float
    d_C_one_sided: float | None = None
    d_H_one_sided: float | None = None
    f_score: float | None = None
    ncs: float | None = None
    tau: float | None = None
    n_samples: int = 0
    units: str = "original"
    normalized: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    CSV_FIELDS = ("d_C", "d_H", "d_C_one_sided", "d_H_one_sided", "f_score", "ncs", "tau",
                  "n_samples")

    def csv_row(self, **extra) -> dict:
        row = dict(extra)
        row.update({k: getattr(self, k) for k in self.CSV_FIELDS})
        return row

    def to_csv(self, **extra) -> str:
        row = self.csv_row(**extra)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def evaluate(mesh, gt_pts, scan_pts=None, gt_normals=None, *, n_samples=100_000,
             tau=None, want_ncs=False, scale=None, rng=0) -> MetricReport:
    """Benchmark distances of ``mesh`` against ground truth and the input scan.

    Lengths are in the mesh's units; with ``scale`` (the normalization scale)
    a copy in normalized units is attached. ``tau`` is in the same units as
    the mesh.
    """
    pts, nrm = sample_mesh(mesh, n_samples, rng)
    d_c, d_h, _, _ = chamfer_hausdorff(pts, gt_pts)
    rep = MetricReport(d_c, d_h, n_samples=n_samples)
    if scan_pts is not None:
        _, _, rep.d_C_one_sided, rep.d_H_one_sided = chamfer_hausdorff(pts, scan_pts)
    if tau is not None:
        rep.tau = tau
        rep.f_score = f_score(pts, gt_pts, tau)
    if want_ncs:
        rep.ncs = normal_consistency(pts, nrm, gt_pts, gt_normals)
    if scale is not None:
        rep.normalized = {k: (None if v is None else v * scale) for k, v in
                          (("d_C", rep.d_C), ("d_H", rep.d_H),
                           ("d_C_one_sided", rep.d_C_one_sided),
                           ("d_H_one_sided", rep.d_H_one_sided), ("tau", rep.tau))}
    return rep
