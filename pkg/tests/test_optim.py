import math

import numpy as np
import pytest

from gridsdf import grid as G
from gridsdf.grid import ActiveSet, ScalarGrid
from gridsdf.ingest import PointCloud
from gridsdf.losses import LossConfig
from gridsdf.optim import (BUDGETS, AdamState, Schedule, ScheduleError, Stage, adam_step,
                           init_grid, reconstruct, sample_batch, train_stage)


def sphere_cloud(m=10000, r=0.3, seed=0):
    rng = np.random.default_rng(seed)
    n = rng.standard_normal((m, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return PointCloud(0.5 + r * n, n)


def plane_cloud(m=2000, seed=0):
    rng = np.random.default_rng(seed)
    q = np.column_stack([np.full(m, 0.5), 0.05 + 0.9 * rng.random((m, 2))])
    return PointCloud(q, np.tile([1.0, 0, 0], (m, 1)))


# --- Adam ---

def adam_oracle(x, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam, one parameter vector, written from the standard update rule."""
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        x = x - lr * mh / (np.sqrt(vh) + eps)
    return x


def test_adam_zero_gradient():
    g = ScalarGrid(2, np.random.default_rng(0).random(27))
    before = g.values.copy()
    act = ActiveSet.full(2)
    st = AdamState.for_active(act)
    adam_step(st, g.zeros_like(), g, act)
    assert np.array_equal(g.values, before)
    assert not st.m.any() and not st.v.any() and st.step == 1


def test_adam_first_step():
    g = ScalarGrid(2)
    act = ActiveSet.full(2)
    st = AdamState.for_active(act)
    grads = np.linspace(-2, 2, 27)
    adam_step(st, grads, g, act)
    expected = -1e-3 * grads / (np.abs(grads) + 1e-8)
    assert np.allclose(g.values, expected, rtol=1e-12, atol=0)


def test_adam_matches_oracle():
    rng = np.random.default_rng(1)
    res = 4
    mask = np.zeros(res**3, bool)
    mask[[0, 7, 63]] = True
    act = ActiveSet(res, mask)
    g = ScalarGrid(res, rng.standard_normal(125))
    x0 = g.values[act.nodes].copy()
    st = AdamState.for_active(act, lr=0.01)
    grads = []
    for _ in range(50):
        buf = np.zeros(125)
        buf[act.nodes] = rng.standard_normal(act.n_nodes)
        grads.append(buf[act.nodes].copy())
        adam_step(st, buf, g, act)
    want = adam_oracle(x0, grads, lr=0.01)
    assert np.allclose(g.values[act.nodes], want, rtol=1e-12, atol=0)


def test_adam_leaves_inactive_untouched_and_checks_shape():
    rng = np.random.default_rng(2)
    mask = rng.random(64) < 0.2
    act = ActiveSet(4, mask)
    g = ScalarGrid(4, rng.standard_normal(125))
    before = g.values.copy()
    st = AdamState.for_active(act)
    adam_step(st, rng.standard_normal(125), g, act)
    assert np.array_equal(g.values[~act.node_mask], before[~act.node_mask])
    other = ActiveSet(4, ~mask)
    with pytest.raises(ValueError):
        adam_step(st, np.zeros(125), g, other)


# --- schedule ---

def test_budgets_and_defaults():
    s = Schedule.from_budget("30min")
    assert [(x.res, x.epochs, x.prune_threshold) for x in s.stages] == [(64, 5, .9), (128, 5, .9), (256, 3, .9)]
    assert s.stages[0].iterations_per_epoch == 12800 and s.stages[0].voxel_batch_fraction == 0.1
    assert (s.lr, s.beta1, s.beta2) == (1e-3, 0.9, 0.999)
    assert BUDGETS["8min"] == ((2, 2, 1), 0.4)
    assert Schedule.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("stages", [[], [Stage(16, 1), Stage(64, 1)], [Stage(16, 1, 0.0)],
                                    [Stage(16, 1, voxel_batch_fraction=0)], [Stage(1, 1)]])
def test_schedule_validation(stages):
    with pytest.raises(ScheduleError):
        Schedule(stages).validate()


# --- init ---

def test_init_sphere():
    g = init_grid(sphere_cloud(), 32)
    assert abs(g.field[16, 16, 16] + 0.3) < 1e-2


def test_init_single_point_and_zero_level():
    g = init_grid(PointCloud([[0.5, 0.5, 0.5]]), 8)
    assert np.allclose(g.values, np.linalg.norm(g.node_coords() - 0.5, axis=1))
    c = sphere_cloud(500)
    g = init_grid(c, 16)
    cen = c.positions.mean(0)
    r = np.linalg.norm(c.positions - cen, axis=1).mean()
    on = np.abs(np.linalg.norm(g.node_coords() - cen, axis=1) - r) < 1e-3
    assert np.all(np.abs(g.values[on]) < g.h)
    with pytest.raises(ValueError):
        init_grid(np.zeros((0, 3)), 8)


# --- batching ---

def test_sample_batch_counts():
    g = ScalarGrid(16)
    rng = np.random.default_rng(3)
    act = ActiveSet(16, rng.random(16**3) < 0.3)
    cloud = sphere_cloud(300)
    b = sample_batch(g, act, cloud, Stage(16, 1, point_batch_size=100), rng)
    assert len(b.voxels) == math.ceil(0.1 * act.n_voxels)
    assert len(np.unique(b.voxels)) == len(b.voxels)
    assert np.all(act.voxel_mask[b.voxels])
    assert len(b.points) == 100 and len(np.unique(b.points)) == 100
    assert np.all(g.interior_mask()[b.nodes])
    corners = np.unique((g.voxel_base_nodes(b.voxels)[:, None] + g.corner_offsets()).ravel())
    assert np.array_equal(b.nodes, corners[g.interior_mask()[corners]])
    b = sample_batch(g, act, cloud, Stage(16, 1, point_batch_size=5000), rng)
    assert np.array_equal(b.points, np.arange(300))


# --- training ---

def test_zero_iterations_unchanged():
    g = init_grid(sphere_cloud(200), 8)
    before = g.values.copy()
    log = train_stage(g, sphere_cloud(200), LossConfig(), Stage(8, 0), np.random.default_rng(0))
    assert log == [] and np.array_equal(g.values, before)


def test_planar_fixed_point():
    g = ScalarGrid.from_function(32, lambda x, y, z: x - 0.5)
    log = train_stage(g, plane_cloud(), LossConfig(), Stage(32, 1, 0.4, 100), np.random.default_rng(0))
    totals = [r["total"] for r in log]
    assert len(totals) == 100 and max(totals) < 1e-6


def test_log_records():
    c = sphere_cloud(500)
    g = init_grid(c, 8)
    log = train_stage(g, c, LossConfig(), Stage(8, 2, 0.4, 3), np.random.default_rng(0))
    assert [r["iter"] for r in log] == list(range(6))
    r = log[0]
    assert set(r) == {"stage", "iter", "res", "components", "total", "active_voxels"}
    assert set(r["components"]) == {"data_point", "data_normal", "viscosity", "coarea"}


def test_empty_active_set_is_schedule_error():
    g = ScalarGrid(8, np.full(729, 5.0))
    with pytest.raises(ScheduleError, match="pruned"):
        train_stage(g, sphere_cloud(100), LossConfig(), Stage(8, 1, 0.4, 2),
                    np.random.default_rng(0), active=G.prune(g, 0.4))
    with pytest.raises(ScheduleError):
        train_stage(ScalarGrid(4), sphere_cloud(100), LossConfig(), Stage(8, 1), np.random.default_rng(0))


def small_schedule(seed=0, iters=20):
    return Schedule([Stage(16, 1, 0.4, iters), Stage(32, 1, 0.4, iters)], seed=seed)


def test_reconstruct_deterministic_and_frozen_nodes():
    c = sphere_cloud(2000)
    a = reconstruct(c, LossConfig(), small_schedule())
    b = reconstruct(c, LossConfig(), small_schedule())
    assert np.array_equal(a.grid.values, b.grid.values)
    assert [r["total"] for r in a.log] == [r["total"] for r in b.log]

    # Frozen nodes equal their post-upsample values.
    coarse = reconstruct(c, LossConfig(), Schedule([Stage(16, 1, 0.4, 20)], seed=0))
    up = G.upsample(coarse.grid)
    frozen = ~a.active.node_mask
    assert frozen.any()
    assert np.array_equal(a.grid.values[frozen], up.values[frozen])


def test_reconstruct_threads_close_to_serial():
    c = sphere_cloud(2000)
    a = reconstruct(c, LossConfig(), small_schedule(iters=5), threads=1)
    b = reconstruct(c, LossConfig(), small_schedule(iters=5), threads=3)
    assert np.allclose(a.grid.values, b.grid.values, rtol=1e-9, atol=1e-12)


def test_reconstruct_errors():
    with pytest.raises(ValueError):
        reconstruct(None, LossConfig(), small_schedule())
    with pytest.raises(ValueError):
        reconstruct(sphere_cloud(10), LossConfig(lambda_v=-1), small_schedule())


def test_pruning_keeps_surface_voxels():
    c = sphere_cloud()
    coarse = reconstruct(c, LossConfig(), Schedule([Stage(32, 1, 0.4, 50)], seed=0))
    fine = G.upsample(coarse.grid)
    act = G.prune(fine, 0.4)
    # Voxels the analytic sphere passes through: nearest box point inside, farthest corner outside.
    lo = fine.voxel_ijk(np.arange(fine.n_voxels)) * fine.h
    hi = lo + fine.h
    near = np.linalg.norm(np.clip(0.5, lo, hi) - 0.5, axis=1)
    far = np.linalg.norm(np.maximum(np.abs(lo - 0.5), np.abs(hi - 0.5)), axis=1)
    crossing = (near <= 0.3) & (far >= 0.3)
    assert crossing.sum() > 1000
    assert np.all(act.voxel_mask[crossing])


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_loss_descends_within_each_stage(seed):
    c = sphere_cloud(seed=seed)
    iters = 100
    sched = Schedule([Stage(32, 2, 0.4, iters), Stage(64, 2, 0.4, iters)], seed=seed)
    rec = reconstruct(c, LossConfig(), sched)
    totals = np.array([r["total"] for r in rec.log]).reshape(-1, iters)
    med = np.median(totals, axis=1)
    for s in range(2):
        assert med[2 * s + 1] <= med[2 * s], (seed, med)
