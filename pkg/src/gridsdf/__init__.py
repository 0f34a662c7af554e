"""Signed distance fields on voxel grids, fitted to oriented point clouds.

The field is stored at grid nodes and trilinearly interpolated. It is fitted
with a data term, a vanishing-viscosity Eikonal residual and a coarea
surface-area prior, then meshed with marching cubes.
"""

from .grid import ActiveSet, DomainError, ScalarGrid, StencilError, load_grid, prune, save_grid, upsample
from .ingest import ParseError, PointCloud, Transform, load_pointcloud, normalize, save_pointcloud, subsample
from .losses import Batch, LossConfig, LossReport, coarea_loss, data_loss, total_loss, viscosity_loss
from .optim import AdamState, Schedule, ScheduleError, Stage, adam_step, init_grid, reconstruct, train_stage
from .extract import TriMesh, marching_cubes, read_mesh, write_mesh
from .metrics import MetricReport, chamfer_hausdorff, evaluate, f_score, normal_consistency

__version__ = "0.1.0"
