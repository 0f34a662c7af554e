"""Oriented point cloud loading and normalization into the unit cube."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .plyio import PlyError, read_ply, write_ply

__all__ = [
    "ParseError",
    "Transform",
    "PointCloud",
    "load_pointcloud",
    "save_pointcloud",
    "normalize",
    "subsample",
]


class ParseError(ValueError):
    """Point cloud file could not be parsed."""


@dataclass(frozen=True)
class Transform:
    """Uniform similarity ``p' = scale * (p - offset)`` into the unit cube."""

    scale: float = 1.0
    offset: tuple = (0.0, 0.0, 0.0)
    margin: float = 0.0

    def apply(self, p):
        return self.scale * (np.asarray(p, dtype=np.float64) - np.asarray(self.offset))

    def invert(self, p):
        return np.asarray(p, dtype=np.float64) / self.scale + np.asarray(self.offset)

    def to_dict(self) -> dict:
        return {"scale": float(self.scale), "offset": [float(x) for x in self.offset],
                "margin": float(self.margin)}

    @classmethod
    def from_dict(cls, d) -> "Transform":
        return cls(float(d["scale"]), tuple(float(x) for x in d["offset"]),
                   float(d.get("margin", 0.0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Transform":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PointCloud:
    positions: np.ndarray
    normals: np.ndarray | None = None
    transform: Transform = Transform()

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.positions.shape:
                raise ValueError("normals do not align with positions")

    def __len__(self):
        return len(self.positions)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


def _detect_format(path, fmt):
    if fmt:
        return fmt.lower()
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("xyz", "txt", "pts", "xyzn"):
        return "xyz"
    if suffix == "ply":
        return "ply"
    raise ParseError(f"{path}: cannot infer point cloud format from extension")


def load_pointcloud(path, fmt=None) -> PointCloud:
    """Read an XYZ (3 or 6 columns) or PLY (vertex x y z [nx ny nz]) file."""
    fmt = _detect_format(path, fmt)
    if fmt == "xyz":
        pos, nrm = _read_xyz(path)
    elif fmt == "ply":
        pos, nrm = _read_ply_points(path)
    else:
        raise ParseError(f"unsupported point cloud format {fmt!r}")
    if np.any(np.isnan(pos)):
        raise ParseError(f"{path}: NaN coordinates")
    if nrm is not None:
        nrm = _unit_normals(nrm)
    return PointCloud(pos, nrm)


def _unit_normals(n):
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ParseError("zero-length or non-finite normals")
    # Leave already-unit normals bit-identical.
    return np.where(np.abs(norm - 1.0) > 1e-12, n / norm, n)


def _read_xyz(path):
    rows = []
    ncols = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) not in (3, 6):
                raise ParseError(f"{path}:{lineno}: expected 3 or 6 columns, got {len(tok)}")
            if ncols is None:
                ncols = len(tok)
            elif len(tok) != ncols:
                raise ParseError(
                    f"{path}:{lineno}: inconsistent column count ({len(tok)} after {ncols})")
            try:
                rows.append([float(t) for t in tok])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: cannot parse {line!r}") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    a = np.asarray(rows, dtype=np.float64)
    return a[:, :3], (a[:, 3:] if ncols == 6 else None)


def _read_ply_points(path):
    try:
        el = read_ply(path)
    except PlyError as e:
        raise ParseError(f"{path}: {e}") from None
    v = el.get("vertex")
    if v is None or not all(k in v for k in "xyz"):
        raise ParseError(f"{path}: PLY has no vertex x/y/z properties")
    pos = np.column_stack([v["x"], v["y"], v["z"]])
    nrm = None
    if all(k in v for k in ("nx", "ny", "nz")):
        nrm = np.column_stack([v["nx"], v["ny"], v["nz"]])
    return pos, nrm


def save_pointcloud(cloud: PointCloud, path, fmt=None, binary=True) -> None:
    fmt = _detect_format(path, fmt)
    cols = cloud.positions if cloud.normals is None else np.hstack([cloud.positions, cloud.normals])
    if fmt == "xyz":
        np.savetxt(path, cols, fmt="%.17g")
    else:
        names = ["x", "y", "z"] + ([] if cloud.normals is None else ["nx", "ny", "nz"])
        write_ply(path, {n: cols[:, i] for i, n in enumerate(names)}, binary=binary)


def normalize(cloud: PointCloud, margin: float = 0.1) -> PointCloud:
    """Uniformly scale and center the bounding box into ``[margin, 1 - margin]^3``."""
    if not 0 < margin < 0.5:
        raise ValueError(f"margin must lie in (0, 0.5), got {margin}")
    p = cloud.positions
    lo, hi = p.min(axis=0), p.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise ValueError("degenerate bounding box: all points identical")
    scale = (1.0 - 2.0 * margin) / extent
    center = 0.5 * (lo + hi)
    offset = center - 0.5 / scale
    t = Transform(scale, tuple(float(x) for x in offset), margin)
    q = t.apply(p)
    # Clamp rounding spill so every point satisfies the margin exactly.
    np.clip(q, margin, 1.0 - margin, out=q)
    return PointCloud(q, None if cloud.normals is None else cloud.normals.copy(), t)


def subsample(cloud: PointCloud, fraction: float, rng=None) -> PointCloud:
    """Uniform sample without replacement of ``ceil(fraction * m)`` points."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    m = len(cloud)
    if fraction == 1:
        return PointCloud(cloud.positions.copy(),
                          None if cloud.normals is None else cloud.normals.copy(),
                          cloud.transform)
    rng = np.random.default_rng(rng)
    k = max(1, math.ceil(fraction * m))
    idx = np.sort(rng.choice(m, size=k, replace=False))
    return PointCloud(cloud.positions[idx],
                      None if cloud.normals is None else cloud.normals[idx],
                      cloud.transform)
