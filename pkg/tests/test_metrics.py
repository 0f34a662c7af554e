import numpy as np
import pytest

from gridsdf.extract import TriMesh, marching_cubes
from gridsdf.grid import ScalarGrid
from gridsdf.metrics import (MetricReport, chamfer_hausdorff, evaluate, f_score, nearest,
                             normal_consistency, sample_mesh)


# --- brute-force O(nm) oracles ---

def bf_dist(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def bf_chamfer_hausdorff(a, b):
    d = bf_dist(a, b)
    ab, ba = d.min(1), d.min(0)
    return 0.5 * (ab.mean() + ba.mean()), max(ab.max(), ba.max()), ab.mean(), ab.max()


def bf_fscore(r, g, tau):
    d = bf_dist(r, g)
    p = np.mean(d.min(1) <= tau)
    rc = np.mean(d.min(0) <= tau)
    return 0.0 if p + rc == 0 else 200 * p * rc / (p + rc)


def bf_ncs(rp, rn, gp, gn):
    d = bf_dist(rp, gp)
    c1 = np.abs((rn * gn[d.argmin(1)]).sum(1)).mean()
    c2 = np.abs((gn * rn[d.argmin(0)]).sum(1)).mean()
    return 50 * (c1 + c2)


def unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def instance(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((rng.integers(1, 600), 3))
    b = rng.random((rng.integers(1, 600), 3))
    return rng, a, b


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force(seed):
    rng, a, b = instance(seed)
    assert chamfer_hausdorff(a, b) == bf_chamfer_hausdorff(a, b)
    tau = rng.uniform(0.01, 0.2)
    assert f_score(a, b, tau) == bf_fscore(a, b, tau)
    na, nb = unit(rng, len(a)), unit(rng, len(b))
    assert normal_consistency(a, na, b, nb) == pytest.approx(bf_ncs(a, na, b, nb), rel=1e-14)


def test_trivial_cases():
    a = np.random.default_rng(0).random((50, 3))
    assert chamfer_hausdorff(a, a) == (0.0, 0.0, 0.0, 0.0)
    assert chamfer_hausdorff([[0, 0, 0]], [[1, 0, 0]]) == (1.0, 1.0, 1.0, 1.0)
    assert f_score(a, a, 1e-9) == 100.0
    assert f_score(a, a + 10, 0.5) == 0.0


def test_fscore_half_overlap():
    recon = np.array([[0, 0, 0], [1, 0, 0]], float)
    gt = np.array([[0, 0, 0], [1, 0, 0], [5, 0, 0], [6, 0, 0]], float)
    assert f_score(recon, gt, 0.1) == pytest.approx(66.67, abs=0.01)


def test_ncs_trivial():
    rng = np.random.default_rng(1)
    p, n = rng.random((100, 3)), unit(rng, 100)
    assert normal_consistency(p, n, p, n) == pytest.approx(100.0)
    perp = np.cross(n, unit(rng, 100))
    perp /= np.linalg.norm(perp, axis=1, keepdims=True)
    assert normal_consistency(p, n, p, perp) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        normal_consistency(p, None, p, n)


def test_errors():
    with pytest.raises(ValueError):
        chamfer_hausdorff(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        f_score(np.zeros((1, 3)), np.zeros((1, 3)), 0.0)
    with pytest.raises(ValueError):
        sample_mesh(TriMesh.empty(), 10)


@pytest.mark.parametrize("seed", range(10))
def test_metric_properties(seed):
    _, a, b = instance(100 + seed)
    dc, dh, cab, hab = chamfer_hausdorff(a, b)
    dc2, dh2, _, _ = chamfer_hausdorff(b, a)
    assert dc == dc2 and dh == dh2
    assert cab <= hab <= dh and dc <= dh
    # adding a point of B to A never increases the one-sided chamfer
    _, _, cab2, _ = chamfer_hausdorff(np.vstack([a, b[:1]]), b)
    assert cab2 <= cab


def test_nearest_indices():
    rng = np.random.default_rng(3)
    a, b = rng.random((200, 3)), rng.random((300, 3))
    d, i = nearest(a, b)
    assert np.array_equal(d, bf_dist(a, b).min(1))
    assert np.array_equal(d, np.sqrt(((a - b[i]) ** 2).sum(1)))


def test_sample_single_triangle():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    p, n = sample_mesh(TriMesh(tri, [[0, 1, 2]]), 2000, 0)
    assert np.all(p[:, 0] >= 0) and np.all(p[:, 1] >= 0) and np.all(p.sum(1) <= 1 + 1e-12)
    assert np.allclose(n, [0, 0, 1])


def test_sample_area_weighting():
    v = np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]], float)
    m = TriMesh(v, [[0, 1, 2], [3, 4, 5]])
    p, _ = sample_mesh(m, 10000, 1)
    k = np.sum(p[:, 0] < 5)
    sigma = np.sqrt(10000 * 0.9 * 0.1)
    assert abs(k - 9000) < 3 * sigma


def test_sample_sphere_centroid():
    g = ScalarGrid.from_function(32, lambda x, y, z: np.sqrt((x - .5)**2 + (y - .5)**2 + (z - .5)**2) - 0.5 * 0.8)
    m = marching_cubes(g)
    m = TriMesh((m.vertices - 0.5) / 0.4, m.triangles)  # unit sphere
    p, _ = sample_mesh(m, 10000, 2)
    # Each coordinate of the mean has sigma = sqrt(1/3 / 10000) ~ 0.0058.
    assert np.all(np.abs(p.mean(0)) < 0.01)
    assert np.all(np.abs(p.mean(0)) < 3 * np.sqrt(1 / 3 / 10000))


def test_evaluate_self_and_offset():
    g = ScalarGrid.from_function(16, lambda x, y, z: z - 0.5)
    m = marching_cubes(g)
    pts, nrm = sample_mesh(m, 20000, 4)
    rep = evaluate(m, pts, n_samples=20000, rng=5)
    assert rep.d_C < 0.01
    off = pts + [0, 0, 0.05]
    rep = evaluate(m, off, scan_pts=off, gt_normals=nrm, n_samples=20000, tau=0.01,
                   want_ncs=True, scale=2.0, rng=6)
    assert rep.d_C_one_sided == pytest.approx(0.05, abs=1e-3)
    assert rep.ncs == pytest.approx(100.0)
    assert rep.normalized["d_C_one_sided"] == pytest.approx(2 * rep.d_C_one_sided)
    assert rep.f_score == 0.0


def test_report_serialization():
    rep = MetricReport(0.1, 0.5, 0.05, 0.4, 80.0, 95.0, 0.01, 1000)
    d = rep.to_dict()
    assert d["d_C"] == 0.1 and d["ncs"] == 95.0
    csv_text = rep.to_csv(mesh="m.ply")
    header, row = csv_text.strip().splitlines()
    assert header.startswith("mesh,d_C,d_H") and row.startswith("m.ply,0.1,0.5")
    import json
    assert json.loads(rep.to_json())["tau"] == 0.01
