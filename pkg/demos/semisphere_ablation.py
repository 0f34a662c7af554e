"""Open semisphere: what the coarea and viscosity terms change.

Without coarea the surface bulges away from the data where there are no
points (larger area); without viscosity (epsilon = 0) spurious sheets and
islands appear (more components). About 75 s.
"""
import numpy as np

from gridsdf import LossConfig, PointCloud, Schedule, Stage, marching_cubes, reconstruct

rng = np.random.default_rng(0)
n = rng.standard_normal((10000, 3))
n[:, 2] = np.abs(n[:, 2])
n /= np.linalg.norm(n, axis=1, keepdims=True)
cloud = PointCloud(0.5 + 0.3 * n, n)

print(f"{'setting':<20}{'area':>8}{'components':>12}")
for name, kw in [("default", {}), ("lambda_c = 0", {"lambda_c": 0.0}), ("epsilon = 0", {"epsilon": 0.0})]:
    sched = Schedule([Stage(32, 2, 0.4, 200), Stage(64, 2, 0.4, 200)], seed=0)
    mesh = marching_cubes(reconstruct(cloud, LossConfig(**kw), sched).grid)
    print(f"{name:<20}{mesh.area():>8.4f}{mesh.connected_components():>12}")
