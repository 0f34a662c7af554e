import numpy as np
import pytest

from gridsdf.extract import TRI_TABLE, TriMesh, marching_cubes, read_mesh, write_mesh
from gridsdf.grid import ActiveSet, ScalarGrid, prune
from gridsdf.ingest import Transform


def sphere(res, r=0.3):
    return ScalarGrid.from_function(res, lambda x, y, z: np.sqrt((x - .5)**2 + (y - .5)**2 + (z - .5)**2) - r)


def canon(mesh):
    """Triangles as sorted coordinate triples, orientation removed."""
    v = np.round(mesh.vertices[mesh.triangles], 12)
    return sorted(tuple(sorted(map(tuple, t))) for t in v)


def test_constant_grid_empty():
    assert marching_cubes(ScalarGrid(4, np.ones(125))).is_empty
    assert marching_cubes(ScalarGrid(4, -np.ones(125))).is_empty


def test_plane():
    g = ScalarGrid.from_function(32, lambda x, y, z: x - 0.5)
    m = marching_cubes(g)
    assert np.all(np.abs(m.vertices[:, 0] - 0.5) < 1e-12)
    assert m.area() == pytest.approx(1.0, abs=1e-6)
    # normals point towards increasing f (+x)
    assert np.all(m.face_normals()[:, 0] > 0.999)


def test_plane_through_nodes_has_no_holes():
    # Zero exactly on a node layer: those nodes count as positive.
    g = ScalarGrid.from_function(8, lambda x, y, z: x - 0.5)
    m = marching_cubes(g)
    assert m.area() == pytest.approx(1.0, abs=1e-12)


def test_sphere_accuracy_and_watertight():
    g = sphere(64)
    m = marching_cubes(g)
    r = np.linalg.norm(m.vertices - 0.5, axis=1)
    assert np.all(np.abs(r - 0.3) < g.h)
    assert m.area() == pytest.approx(4 * np.pi * 0.09, rel=0.03)
    assert m.is_watertight()
    assert m.connected_components() == 1
    # outward normals (towards increasing f)
    c = m.vertices[m.triangles].mean(axis=1) - 0.5
    assert np.all(np.sum(m.face_normals() * c, axis=1) > 0)


@pytest.mark.parametrize("seed", range(10))
def test_random_grids_watertight_same_vertices_under_negation(seed):
    rng = np.random.default_rng(seed)
    res = 6
    vals = rng.standard_normal((res + 1) ** 3)
    f = vals.reshape((res + 1,) * 3)
    f[0], f[-1], f[:, 0], f[:, -1], f[:, :, 0], f[:, :, -1] = 1, 1, 1, 1, 1, 1
    m = marching_cubes(ScalarGrid(res, vals))
    mn = marching_cubes(ScalarGrid(res, -vals))
    assert m.is_watertight()
    assert mn.is_watertight()
    # Edge crossings do not depend on the sign; ambiguous faces may be
    # joined differently, so only the vertex set is compared here.
    assert np.array_equal(np.unique(m.vertices, axis=0), np.unique(mn.vertices, axis=0))


def torus(res):
    return ScalarGrid.from_function(
        res, lambda x, y, z: np.sqrt((np.sqrt((x - .5)**2 + (y - .5)**2) - 0.25)**2 + (z - .5)**2) - 0.1)


@pytest.mark.parametrize("make", [lambda: sphere(32), lambda: torus(40)])
def test_negation_reverses_orientation(make):
    g = make()
    m = marching_cubes(g)
    mn = marching_cubes(ScalarGrid(g.res, -g.values))
    assert np.array_equal(m.vertices, mn.vertices)
    assert canon(m) == canon(mn)
    oriented = {tuple(np.roll(t, -np.argmin(t))) for t in m.triangles.tolist()}
    reversed_n = {tuple(np.roll(t[::-1], -np.argmin(t[::-1]))) for t in mn.triangles.tolist()}
    assert oriented == reversed_n


def test_table_shape():
    assert TRI_TABLE.shape[0] == 256


def test_active_restriction():
    g = sphere(32)
    full = marching_cubes(g)
    assert canon(marching_cubes(g, active=ActiveSet.full(32))) == canon(full)
    assert np.array_equal(marching_cubes(g, active=ActiveSet.full(32)).vertices, full.vertices)
    near = prune(g, 0.05)
    assert canon(marching_cubes(g, active=near)) == canon(full)
    none = ActiveSet(32, np.zeros(32**3, bool))
    assert marching_cubes(g, active=none).is_empty


def test_no_degenerate_triangles():
    g = sphere(16)
    g.values[np.abs(g.values) < 0.02] = 0.0  # many exact zeros
    m = marching_cubes(g)
    assert np.all(m.triangle_areas() > 1e-14)
    assert m.triangles.max() < len(m.vertices)


def test_write_empty(tmp_path):
    for name in ("e.obj", "e.ply"):
        write_mesh(TriMesh.empty(), tmp_path / name)
        assert read_mesh(tmp_path / name).is_empty


def test_obj_unit_triangle(tmp_path):
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    write_mesh(m, tmp_path / "t.obj", transform=Transform())
    lines = (tmp_path / "t.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 3
    assert [l for l in lines if l.startswith("f")] == ["f 1 2 3"]


@pytest.mark.parametrize("name", ["s.obj", "s.ply"])
def test_sphere_roundtrip_with_transform(tmp_path, name):
    m = marching_cubes(sphere(24))
    t = Transform(0.25, (-1.0, 2.0, 0.5), 0.1)
    write_mesh(m, tmp_path / name, transform=t)
    back = read_mesh(tmp_path / name)
    assert np.allclose(back.vertices, t.invert(m.vertices), atol=1e-6)
    assert np.array_equal(back.triangles, m.triangles)
    if name.endswith("ply"):
        assert (tmp_path / name).read_bytes().startswith(b"ply\nformat binary_little_endian")


def test_mesh_index_validation():
    with pytest.raises(ValueError):
        TriMesh([[0, 0, 0]], [[0, 1, 2]])


def test_components_count():
    a = sphere(32, 0.1)
    b = ScalarGrid.from_function(32, lambda x, y, z: np.sqrt((x - .2)**2 + (y - .2)**2 + (z - .2)**2) - 0.08)
    m = marching_cubes(ScalarGrid(32, np.minimum(a.values, b.values)))
    assert m.connected_components() == 2
