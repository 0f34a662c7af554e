"""One-dimensional picture of why the plain Eikonal loss is not enough on a grid.

Two profiles vanish at the same two points and have slope exactly +-1 on every
cell: the signed distance to the interval between the points, and a sawtooth
that folds back and forth inside it. Both are exact minimizers of the Eikonal
loss of the piecewise-linear interpolant; only the viscosity residual tells
them apart.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import viscosity_residual


@dataclass
class Profile1D:
    name: str
    x: np.ndarray
    f: np.ndarray

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])


def sdf_profile(res=64, q1=0.25, q2=0.75) -> Profile1D:
    x = np.arange(res + 1) / res
    c, w = 0.5 * (q1 + q2), 0.5 * (q2 - q1)
    return Profile1D("sdf", x, np.abs(x - c) - w)


def zigzag_profile(res=64, q1=0.25, q2=0.75, tooth=2) -> Profile1D:
    """Signed distance outside ``[q1, q2]``, a sawtooth of depth ``tooth * h`` inside."""
    p = sdf_profile(res, q1, q2)
    h = 1.0 / res
    i1, i2 = round(q1 * res), round(q2 * res)
    if (i2 - i1) % (2 * tooth):
        raise ValueError("interval length must be a whole number of sawtooth periods")
    k = np.arange(i2 - i1 + 1) % (2 * tooth)
    f = p.f.copy()
    f[i1 : i2 + 1] = -np.minimum(k, 2 * tooth - k) * h
    return Profile1D("zigzag", p.x, f)


def eikonal_loss(p: Profile1D) -> float:
    """Exact integral of ``(|f'| - 1)^2`` for the piecewise-linear interpolant."""
    slope = np.diff(p.f) / p.h
    return float(np.sum(p.h * (np.abs(slope) - 1.0) ** 2))


def residuals(p: Profile1D, epsilon) -> np.ndarray:
    """Viscosity residual at interior nodes (central differences)."""
    f, h = p.f, p.h
    grad = ((f[2:] - f[:-2]) / (2 * h))[:, None]
    lap = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
    return viscosity_residual(grad, lap, f[1:-1], epsilon)


def viscosity_loss(p: Profile1D, epsilon) -> float:
    r = residuals(p, epsilon)
    return float(np.mean(r * r))


def run_demo(outdir, res=64, epsilon=1e-2) -> dict:
    """Write ``profiles.csv`` (one row per node and profile) and return the losses."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    profiles = [sdf_profile(res), zigzag_profile(res)]
    summary = {}
    with open(outdir / "profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["profile", "i", "x", "f", "residual_eikonal", "residual_viscosity"])
        for p in profiles:
            r0 = np.concatenate([[np.nan], residuals(p, 0.0), [np.nan]])
            r1 = np.concatenate([[np.nan], residuals(p, epsilon), [np.nan]])
            for i in range(len(p.x)):
                w.writerow([p.name, i, repr(float(p.x[i])), repr(float(p.f[i])),
                            "" if np.isnan(r0[i]) else repr(float(r0[i])),
                            "" if np.isnan(r1[i]) else repr(float(r1[i]))])
            summary[p.name] = {"eikonal_loss": eikonal_loss(p),
                               "viscosity_loss": viscosity_loss(p, epsilon)}
    summary["epsilon"] = epsilon
    summary["res"] = res
    return summary
