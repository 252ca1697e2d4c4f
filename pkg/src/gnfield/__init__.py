"""Explicit voxel radiance fields fitted with a matrix-free Gauss-Newton solver."""
import numba as _numba

# TBB in this ecosystem is often too old for numba; prefer OpenMP, then workqueue.
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .scene import Scene, VoxelGrid, EnvLayer, init_level, upsample, param_index, param_slot  # noqa: E402
from .rays import Camera, Ray, RayBatch, TraceConfig, generate_ray, build_samples  # noqa: E402
from .solver import GnConfig, PcgConfig, solve_hierarchy  # noqa: E402
from .render import render_view, foreground_mask, psnr  # noqa: E402

__version__ = "0.1.0"
