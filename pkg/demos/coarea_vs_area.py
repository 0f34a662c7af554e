"""The coarea loss over the whole cube approximates the surface area.

Sphere r = 0.3 converges toward 4 pi r^2 as beta shrinks. The axis-aligned
plane x = 0.5 does not: every voxel center sits exactly h/2 off a layer, so
the sum of Laplace densities is a fixed geometric series, 1/sinh(h/(2 beta))
times h/(2 beta), which is 0.851 at beta = h/2 rather than 1.
"""
import numpy as np

from gridsdf import ScalarGrid
from gridsdf.losses import coarea_loss

res = 64
h = 1 / res
shapes = {
    "sphere": (lambda x, y, z: np.sqrt((x - .5)**2 + (y - .5)**2 + (z - .5)**2) - 0.3, 4 * np.pi * 0.09),
    "plane x=0.5": (lambda x, y, z: x - 0.5, 1.0),
    "plane x=0.5+h/4": (lambda x, y, z: x - 0.5 - h / 4, 1.0),
}
for name, (fn, area) in shapes.items():
    g = ScalarGrid.from_function(res, fn)
    vals = [coarea_loss(g, np.arange(g.n_voxels), b, normalization=g.n_voxels) for b in (4 * h, 2 * h, h, h / 2)]
    print(f"{name:<16} area {area:.4f}  beta=4h,2h,h,h/2: " + " ".join(f"{v:.4f}" for v in vals))
x = h / (2 * (h / 2))
print(f"closed form for the centered plane at beta = h/2: {x / np.sinh(x):.4f}")
