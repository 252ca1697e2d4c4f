"""Procedural ground-truth scenes and camera rigs for self-consistency checks."""
from __future__ import annotations

import numpy as np

from .io import Dataset
from .rays import Camera, look_at
from .render import render_view
from .scene import EnvLayer, Scene, VoxelGrid, layer_schedule


def ground_truth_scene(dims=(32, 32, 32), face_res=8, n_layers=2, half=1.0,
                       density=30.0, dtype=np.float32) -> Scene:
    """Opaque sphere and box inside a transparent grid, an opaque sky on the outer layer."""
    grid = VoxelGrid(tuple(dims), (-half,) * 3, (half,) * 3)
    axes = [grid.cell_centers(a) for a in range(3)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    vals = np.zeros(tuple(reversed(dims)) + (4,))

    sc = np.array([-0.25, 0.1, 0.0]) * half
    r = np.sqrt((x - sc[0]) ** 2 + (y - sc[1]) ** 2 + (z - sc[2]) ** 2)
    sphere = r < 0.45 * half
    vals[sphere, 0] = 0.5 + 0.4 * np.sin(6 * x[sphere] / half)
    vals[sphere, 1] = 0.5 + 0.4 * np.cos(5 * z[sphere] / half)
    vals[sphere, 2] = 0.3
    vals[sphere, 3] = density

    box = ((x > 0.2 * half) & (x < 0.65 * half) & (y > -0.55 * half) & (y < 0.25 * half)
           & (z > -0.6 * half) & (z < 0.15 * half))
    vals[box, :3] = [0.9, 0.55, 0.1]
    vals[box, 3] = density

    blocks = [vals.reshape(-1, 4)]
    layers = []
    for k, h in enumerate(layer_schedule(half, n_layers)):
        layers.append(EnvLayer(face_res, h))
        tex = np.zeros((6, face_res, face_res, 4))
        if k == n_layers - 1:
            ramp = np.linspace(0.0, 1.0, face_res)
            for f in range(6):
                tex[f, :, :, 0] = 0.2 + 0.1 * f
                tex[f, :, :, 1] = 0.4 + 0.4 * ramp[:, None]
                tex[f, :, :, 2] = 0.8 - 0.3 * ramp[None, :]
            tex[..., 3] = 5.0
        blocks.append(tex.reshape(-1, 4))
    params = np.concatenate(blocks).astype(dtype).ravel()
    return Scene(grid, layers, params)


def orbit_cameras(n_views: int, radius: float, width: int, height: int, fov_deg: float = 50.0,
                  target=(0.0, 0.0, 0.0)) -> list:
    """Cameras on a Fibonacci sphere, all looking at ``target``."""
    focal = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
    cams = []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for i in range(n_views):
        zc = 1.0 - 2.0 * (i + 0.5) / n_views
        rr = np.sqrt(max(0.0, 1.0 - zc * zc))
        eye = radius * np.array([rr * np.cos(golden * i), rr * np.sin(golden * i), zc])
        cams.append(Camera(look_at(eye, target), focal, width, height))
    return cams


def render_dataset(scene: Scene, cameras, background=(1.0, 1.0, 1.0), split="train") -> Dataset:
    """Render ``cameras`` without the opacity threshold (the raw forward model)."""
    images = [render_view(scene, cam, threshold_enabled=False, background=background)
              for cam in cameras]
    return Dataset(list(cameras), images, split=split)


def self_consistency_fixture(n_views=40, n_holdout=8, size=96, dims=(32, 32, 32), face_res=8,
                             radius=3.2, background=(1.0, 1.0, 1.0)):
    """Ground truth plus (train, holdout) datasets; every ``n_views // n_holdout``-th view is held out."""
    gt = ground_truth_scene(dims, face_res)
    cams = orbit_cameras(n_views, radius, size, size)
    every = n_views // n_holdout
    hold_idx = [i for i in range(n_views) if i % every == every // 2][:n_holdout]
    train_idx = [i for i in range(n_views) if i not in hold_idx]
    full = render_dataset(gt, cams, background)
    return gt, full.subset(train_idx, "train"), full.subset(hold_idx, "holdout")
