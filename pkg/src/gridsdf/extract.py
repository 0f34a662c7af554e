"""Zero-level-set extraction (marching cubes) and mesh file I/O.

The 256-case triangle table is generated at import time rather than typed in.
For every face of the cube the crossing points are joined into segments that
keep the negative region on their left (seen from outside), pairing each
negative-to-positive crossing with the preceding positive-to-negative one, so
on ambiguous faces the negative corners are separated. The rule depends only on
the four corner signs of a face, which makes neighbouring cubes agree and the
output crack-free. Segments chain into closed loops, triangulated without any
diagonal between two crossings on the same cube face.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .grid import CORNERS, ScalarGrid
from .plyio import PlyError, read_ply, write_ply

__all__ = [
    "TriMesh",
    "marching_cubes",
    "write_mesh",
    "read_mesh",
    "EDGES",
    "TRI_TABLE",
]


def _cube_edges():
    edges = []
    for u in range(8):
        for v in range(u + 1, 8):
            d = CORNERS[u] != CORNERS[v]
            if d.sum() == 1:
                edges.append((u, v, int(np.argmax(d))))
    return edges


EDGES = _cube_edges()
_EDGE_ID = {frozenset((u, v)): e for e, (u, v, _) in enumerate(EDGES)}


def _cube_faces():
    """Corner cycles per face, counter-clockwise seen from outside."""
    faces = []
    for axis in range(3):
        for side in (0, 1):
            corners = [c for c in range(8) if CORNERS[c][axis] == side]
            normal = np.zeros(3)
            normal[axis] = 2 * side - 1
            u = np.zeros(3)
            u[(axis + 1) % 3] = 1
            v = np.cross(normal, u)
            center = CORNERS[corners].mean(axis=0)
            ang = [np.arctan2((CORNERS[c] - center) @ v, (CORNERS[c] - center) @ u)
                   for c in corners]
            faces.append([corners[i] for i in np.argsort(ang)])
    return faces


_FACES = _cube_faces()


def _case_triangles(case):
    neg = [(case >> c) & 1 == 1 for c in range(8)]
    nxt = {}
    for cyc in _FACES:
        crossings = []
        for i in range(4):
            a, b = cyc[i], cyc[(i + 1) % 4]
            if neg[a] != neg[b]:
                crossings.append((_EDGE_ID[frozenset((a, b))], neg[a]))
        for i, (e, starts) in enumerate(crossings):
            if starts:
                # Pair with the preceding positive-to-negative crossing.
                j = (i - 1) % len(crossings)
                nxt[e] = crossings[j][0]
    tris = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        # Loops run counter-clockwise around the negative side; reversing each
        # triangle makes normals point towards increasing values.
        tris.extend((loop[i], loop[k], loop[j]) for i, j, k in _triangulate_loop(loop))
    return tris


def _edge_faces(e):
    u, _, axis = EDGES[e]
    return {(ax, int(CORNERS[u][ax])) for ax in range(3) if ax != axis}


def _triangulations(lo, hi):
    if hi - lo < 2:
        yield []
        return
    for m in range(lo + 1, hi):
        for left in _triangulations(lo, m):
            for right in _triangulations(m, hi):
                yield left + [(lo, m, hi)] + right


def _triangulate_loop(loop):
    """Loop-position triangles whose diagonals never join two crossings on one face.

    Such a diagonal could coincide with one from the neighbouring cube and
    leave an edge shared by four triangles. Among valid triangulations the one
    with the smallest sorted diagonal set wins, a choice that does not depend on
    the loop direction.
    """
    n = len(loop)
    best = None
    for tri in _triangulations(0, n - 1):
        diags = set()
        ok = True
        for t in tri:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
                if b - a in (1, n - 1):
                    continue
                if _edge_faces(loop[a]) & _edge_faces(loop[b]):
                    ok = False
                diags.add(tuple(sorted((loop[a], loop[b]))))
        if ok:
            key = sorted(diags)
            if best is None or key < best[0]:
                best = (key, tri)
    if best is None:
        raise RuntimeError(f"no face-safe triangulation for loop {loop}")
    return best[1]


def _build_table():
    cases = [_case_triangles(c) for c in range(256)]
    width = max(len(t) for t in cases)
    table = -np.ones((256, width, 3), dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for c, tris in enumerate(cases):
        counts[c] = len(tris)
        if tris:
            table[c, : len(tris)] = tris
    return table, counts


TRI_TABLE, TRI_COUNT = _build_table()


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def face_normals(self, unit=True) -> np.ndarray:
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        if unit:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(length > 0, length, 1.0)
        return n

    def triangle_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edge_counts(self) -> np.ndarray:
        """Number of triangles sharing each undirected edge."""
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return not self.is_empty and bool(np.all(self.edge_counts() == 2))

    def connected_components(self) -> int:
        if self.is_empty:
            return 0
        t = self.triangles
        used = np.unique(t)
        rows = np.concatenate([t[:, 0], t[:, 1]])
        cols = np.concatenate([t[:, 1], t[:, 2]])
        n = len(self.vertices)
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        return len(np.unique(labels[used]))

    def transformed(self, fn) -> "TriMesh":
        return TriMesh(fn(self.vertices), self.triangles.copy(), self.normals)


def _voxel_mask_with_neighbours(active, res):
    m = active.voxel_mask.reshape(res, res, res)
    out = m.copy()
    out[1:] |= m[:-1]
    out[:-1] |= m[1:]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    out[:, :, 1:] |= m[:, :, :-1]
    out[:, :, :-1] |= m[:, :, 1:]
    return out.ravel()


def marching_cubes(grid: ScalarGrid, iso: float = 0.0, active=None) -> TriMesh:
    """Triangulate ``{f = iso}``; nodes with ``f == iso`` count as positive.

    With ``active`` only its voxels and their face neighbours are processed.
    Triangle normals point towards increasing ``f``.
    """
    n = grid.res
    F = grid.field
    neg = (F - iso) < 0
    case = np.zeros((n, n, n), dtype=np.int64)
    for bit, (a, b, c) in enumerate(CORNERS):
        case |= neg[a : a + n, b : b + n, c : c + n].astype(np.int64) << bit
    case = case.ravel()
    sel = (case != 0) & (case != 255)
    if active is not None:
        sel &= _voxel_mask_with_neighbours(active, n)
    vox = np.flatnonzero(sel)
    if vox.size == 0:
        return TriMesh.empty()

    vcase = case[vox]
    ntri = TRI_COUNT[vcase]
    owner = np.repeat(np.arange(len(vox)), ntri)
    slot = np.arange(len(owner)) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    local = TRI_TABLE[vcase[owner], slot]  # (T, 3) cube edge ids

    base = grid.voxel_base_nodes(vox)[owner]
    offs = grid.corner_offsets()
    e_lower = np.array([offs[u] for u, _, _ in EDGES])
    e_axis = np.array([ax for _, _, ax in EDGES])
    N = grid.n_nodes
    keys = e_axis[local] * N + base[:, None] + e_lower[local]

    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    tris = inv.reshape(-1, 3)
    axis = uniq // N
    n0 = uniq % N
    strides = np.array(grid.strides)
    n1 = n0 + strides[axis]
    f0 = grid.values[n0] - iso
    f1 = grid.values[n1] - iso
    t = -f0 / (f1 - f0)
    verts = grid.node_coords(n0)
    verts[np.arange(len(uniq)), axis] += t * grid.h

    mesh = TriMesh(verts, tris)
    keep = mesh.triangle_areas() > 1e-14
    if not np.all(keep):
        mesh = _compact(verts, tris[keep])
    return mesh


def _compact(verts, tris):
    used, inv = np.unique(tris.ravel(), return_inverse=True)
    return TriMesh(verts[used], inv.reshape(-1, 3))


def write_mesh(mesh: TriMesh, path, fmt=None, transform=None) -> None:
    """Write OBJ (ascii) or PLY (binary little-endian) in original coordinates.

    ``transform`` maps normalized to original coordinates, e.g. an ingest
    ``Transform`` (its ``invert`` is used) or any callable.
    """
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    v = mesh.vertices
    if transform is not None:
        v = transform.invert(v) if hasattr(transform, "invert") else transform(v)
    if fmt == "obj":
        with open(path, "w") as fh:
            for x, y, z in v.tolist():
                fh.write(f"v {x!r} {y!r} {z!r}\n")
            for a, b, c in mesh.triangles + 1:
                fh.write(f"f {a} {b} {c}\n")
    elif fmt == "ply":
        write_ply(path, {"x": v[:, 0], "y": v[:, 1], "z": v[:, 2]}, mesh.triangles)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")


def read_mesh(path, fmt=None) -> TriMesh:
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt == "obj":
        verts, faces = [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                tok = line.split()
                if not tok:
                    continue
                try:
                    if tok[0] == "v":
                        verts.append([float(x) for x in tok[1:4]])
                    elif tok[0] == "f":
                        idx = [int(x.split("/")[0]) - 1 for x in tok[1:]]
                        faces.extend((idx[0], idx[i], idx[i + 1]) for i in range(1, len(idx) - 1))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
        return TriMesh(np.asarray(verts).reshape(-1, 3), np.asarray(faces).reshape(-1, 3))
    if fmt == "ply":
        try:
            el = read_ply(path)
        except PlyError as e:
            raise ValueError(f"{path}: {e}") from None
        v = el.get("vertex", {})
        verts = np.column_stack([v["x"], v["y"], v["z"]]) if "x" in v else np.zeros((0, 3))
        faces = np.zeros((0, 3), dtype=np.int64)
        if "face" in el:
            lists = next(iter(el["face"].values()))
            if isinstance(lists, list):
                faces = np.array([(f[0], f[i], f[i + 1]) for f in lists
                                  for i in range(1, len(f) - 1)]).reshape(-1, 3)
            elif len(lists):
                k = lists.shape[1]
                faces = np.concatenate([lists[:, [0, i, i + 1]] for i in range(1, k - 1)])
        return TriMesh(verts, faces)
    raise ValueError(f"unsupported mesh format {fmt!r}")
