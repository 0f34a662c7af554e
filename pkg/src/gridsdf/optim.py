"""Adam over active node values and the coarse-to-fine training schedule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import grid as G
from .losses import Batch, LossConfig, total_loss

__all__ = [
    "ScheduleError",
    "AdamState",
    "adam_step",
    "Stage",
    "Schedule",
    "BUDGETS",
    "init_grid",
    "sample_batch",
    "train_stage",
    "reconstruct",
    "Reconstruction",
]


class ScheduleError(RuntimeError):
    """Schedule cannot run (bad stage list, or everything pruned)."""


@dataclass
class AdamState:
    nodes: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step: int = 0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        if self.m is None:
            self.m = np.zeros(len(self.nodes))
        if self.v is None:
            self.v = np.zeros(len(self.nodes))

    @classmethod
    def for_active(cls, active: G.ActiveSet, **kw) -> "AdamState":
        return cls(active.nodes.copy(), **kw)


def adam_step(state: AdamState, grads, grid: G.ScalarGrid, active: G.ActiveSet) -> None:
    """One bias-corrected Adam update of the active nodes, in place."""
    if len(state.nodes) != active.n_nodes or not np.array_equal(state.nodes, active.nodes):
        raise ValueError("optimizer state does not match the active node set")
    g = grads[state.nodes]
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    grid.values[state.nodes] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)


@dataclass
class Stage:
    res: int
    epochs: int
    prune_threshold: float = 0.9
    iterations_per_epoch: int = 12800
    voxel_batch_fraction: float = 0.1
    point_batch_size: int = 5000

    @property
    def iterations(self) -> int:
        return self.epochs * self.iterations_per_epoch


# Epochs per resolution and pruning threshold of the preset time budgets.
BUDGETS = {
    "30min": ((5, 5, 3), 0.9),
    "21min": ((2, 2, 2), 0.9),
    "15min": ((2, 2, 2), 0.4),
    "8min": ((2, 2, 1), 0.4),
}


@dataclass
class Schedule:
    stages: list
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999

    @classmethod
    def from_budget(cls, budget="30min", resolutions=(64, 128, 256), seed=0,
                    iterations_per_epoch=12800) -> "Schedule":
        epochs, t = BUDGETS[budget]
        return cls([Stage(r, e, t, iterations_per_epoch) for r, e in zip(resolutions, epochs)],
                   seed=seed)

    def validate(self) -> "Schedule":
        if not self.stages:
            raise ScheduleError("schedule has no stages")
        for i, s in enumerate(self.stages):
            if s.res < 2:
                raise ScheduleError(f"stage {i}: res must be at least 2")
            if i and s.res != 2 * self.stages[i - 1].res:
                raise ScheduleError(f"stage {i}: res {s.res} is not double the previous")
            if not 0 < s.voxel_batch_fraction <= 1:
                raise ScheduleError(f"stage {i}: voxel_batch_fraction must lie in (0, 1]")
            if s.epochs < 0 or s.iterations_per_epoch < 0 or s.point_batch_size < 1:
                raise ScheduleError(f"stage {i}: negative epochs/iterations or empty point batch")
            if not s.prune_threshold > 0:
                raise ScheduleError(f"stage {i}: prune_threshold must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d) -> "Schedule":
        d = dict(d)
        d["stages"] = [Stage(**s) for s in d.get("stages", [])]
        return cls(**d)


def init_grid(cloud, res) -> G.ScalarGrid:
    """Signed distance to the sphere through the points' mean radius about their centroid."""
    p = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("cannot initialize from an empty point cloud")
    c = p.mean(axis=0)
    r = float(np.linalg.norm(p - c, axis=1).mean())
    g = G.ScalarGrid(res)
    g.values[:] = np.linalg.norm(g.node_coords() - c, axis=1) - r
    return g


def sample_batch(grid, active, cloud, stage: Stage, rng) -> Batch:
    """Random voxel fraction (plus their interior corners) and a point batch."""
    nv = active.n_voxels
    k = math.ceil(stage.voxel_batch_fraction * nv)
    voxels = np.sort(active.voxels[rng.choice(nv, size=k, replace=False)])
    corners = (grid.voxel_base_nodes(voxels)[:, None] + grid.corner_offsets()[None]).ravel()
    corners = np.unique(corners)
    nodes = corners[grid.interior_mask()[corners]]
    m = len(cloud.positions)
    if stage.point_batch_size >= m:
        pts = np.arange(m)
    else:
        pts = np.sort(rng.choice(m, size=stage.point_batch_size, replace=False))
    return Batch(voxels, nodes, pts)


def train_stage(grid, cloud, cfg: LossConfig, stage: Stage, rng, active=None,
                schedule: Schedule | None = None, stage_index=0,
                on_step: Callable[[dict], None] | None = None, threads=None):
    """Run ``stage.iterations`` Adam steps in place; returns the per-step records."""
    if grid.res != stage.res:
        raise ScheduleError(f"grid res {grid.res} does not match stage res {stage.res}")
    active = G.ActiveSet.full(grid.res) if active is None else active
    if active.n_voxels == 0:
        raise ScheduleError(
            f"stage {stage_index} (res {stage.res}): every voxel was pruned at "
            f"threshold {stage.prune_threshold}; the field never comes that close to zero")
    sched = schedule or Schedule([stage])
    state = AdamState.for_active(active, lr=sched.lr, beta1=sched.beta1, beta2=sched.beta2)
    records = []
    for it in range(stage.iterations):
        batch = sample_batch(grid, active, cloud, stage, rng)
        report, buf = total_loss(grid, active, batch, cloud, cfg, threads=threads)
        adam_step(state, buf, grid, active)
        rec = {"stage": stage_index, "iter": it, "res": stage.res,
               "components": {"data_point": report.data_point,
                              "data_normal": report.data_normal,
                              "viscosity": report.viscosity, "coarea": report.coarea},
               "total": report.total, "active_voxels": active.n_voxels}
        records.append(rec)
        if on_step is not None:
            on_step(rec)
    return records


@dataclass
class Reconstruction:
    grid: G.ScalarGrid
    active: G.ActiveSet
    log: list


def reconstruct(cloud, cfg: LossConfig, schedule: Schedule, on_step=None,
                threads=None) -> Reconstruction:
    """Coarse-to-fine optimization; prunes after every upsampling."""
    if cloud is None or len(cloud.positions) == 0:
        raise ValueError("cannot reconstruct from an empty point cloud")
    cfg.validate()
    schedule.validate()
    rng = np.random.default_rng(schedule.seed)
    grid = init_grid(cloud, schedule.stages[0].res)
    active = G.ActiveSet.full(grid.res)
    log = []
    for i, stage in enumerate(schedule.stages):
        if i:
            grid = G.upsample(grid)
            active = G.prune(grid, stage.prune_threshold)
        log += train_stage(grid, cloud, cfg, stage, rng, active, schedule, i,
                           on_step, threads)
    return Reconstruction(grid, active, log)
