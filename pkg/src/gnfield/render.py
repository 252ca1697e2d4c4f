"""Novel-view rendering, foreground masks and PSNR."""
from __future__ import annotations

import numpy as np

from . import _kernels as K
from .rays import Camera, camera_rays
from .scene import Scene
from .validation import check_color, check_same_shape

OPACITY_THRESHOLD = 0.7


def _render(scene: Scene, cam: Camera, background, threshold, n_chunks, step=None):
    rays = camera_rays(cam)
    step = scene.min_step() if step is None else step
    rgb = np.empty((len(rays), 3))
    opacity = np.empty(len(rays))
    K.render_pass(rays.origins, rays.dirs, *scene.geometry(), scene.params,
                  check_color(background), float(step), float(threshold), int(n_chunks),
                  scene.max_samples(step), rgb, opacity)
    return rgb.reshape(cam.height, cam.width, 3), opacity.reshape(cam.height, cam.width)


def render_view(scene: Scene, cam: Camera, threshold_enabled: bool = True,
                background=(1.0, 1.0, 1.0), n_chunks: int = 1, return_opacity: bool = False):
    """Render ``cam``'s image through pixel centers without jitter.

    With ``threshold_enabled`` the grid contribution of a pixel is dropped when
    its grid-only opacity is below 0.7; env layers and background still show.
    Output is clamped to [0, 1].
    """
    thr = OPACITY_THRESHOLD if threshold_enabled else -np.inf
    rgb, opacity = _render(scene, cam, background, thr, n_chunks)
    rgb = np.clip(rgb, 0.0, 1.0)
    return (rgb, opacity) if return_opacity else rgb


def grid_opacity(scene: Scene, cam: Camera, n_chunks: int = 1) -> np.ndarray:
    """Per-pixel grid-only accumulated opacity ``1 - T_grid``."""
    return _render(scene, cam, (0.0, 0.0, 0.0), -np.inf, n_chunks)[1]


def foreground_mask(scene: Scene, cam: Camera, n_chunks: int = 1) -> np.ndarray:
    """Pixels whose grid opacity passes the render threshold."""
    return grid_opacity(scene, cam, n_chunks) >= OPACITY_THRESHOLD


def psnr(a, b, mask=None) -> float:
    """PSNR in dB for [0, 1] images, MSE pooled over channels of unmasked pixels.

    Identical inputs give ``inf``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    diff = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:mask.ndim]:
            raise ValueError(f"mask shape {mask.shape} does not match image {a.shape}")
        if not mask.any():
            raise ValueError("mask selects no pixels")
        diff = diff[mask]
    mse = float(np.mean(diff))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
