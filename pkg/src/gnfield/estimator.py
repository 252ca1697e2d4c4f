"""scikit-learn style front end: ``fit`` posed images, ``predict`` novel views."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .io import Dataset
from .rays import Camera
from .render import foreground_mask, psnr, render_view
from .solver import GnConfig, PcgConfig, solve_hierarchy
from .validation import check_color, check_image


def check_dataset(X, y=None) -> Dataset:
    """Accept a Dataset, or a list of cameras with images passed as ``y``."""
    if isinstance(X, Dataset):
        ds = X
    else:
        cams = list(X)
        if y is None:
            raise ValueError("images must be given as y when X is a list of cameras")
        ds = Dataset(cams, [check_image(img, f"image {i}") for i, img in enumerate(y)])
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    for i, (cam, img) in enumerate(zip(ds.cameras, ds.images)):
        if not isinstance(cam, Camera):
            raise TypeError(f"entry {i} is not a Camera")
        if np.shape(img) != (cam.height, cam.width, 3):
            raise ValueError(f"image {i} has shape {np.shape(img)}, camera expects "
                             f"({cam.height}, {cam.width}, 3)")
    return ds


def check_cameras(X) -> list:
    if isinstance(X, Dataset):
        return list(X.cameras)
    if isinstance(X, Camera):
        return [X]
    cams = list(X)
    if not all(isinstance(c, Camera) for c in cams):
        raise TypeError("expected Camera instances")
    return cams


class RadianceFieldReconstructor(BaseEstimator):
    """Fit a voxel radiance field with env-map envelope to posed images.

    Parameters mirror :class:`gnfield.solver.GnConfig`; see there for meaning.
    After ``fit``, ``scene_`` holds the reconstruction and ``report_`` the
    per-iteration log.
    """

    def __init__(self, levels=5, iters_per_level=30, base_grid=(32, 32, 32), base_face_res=32,
                 env_layers=4, aabb=((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)), lambda_aux=0.1,
                 backtrack_alpha=0.7, backtrack_cap=16, pcg_eps_scale=1e-10, pcg_stall_ratio=0.85,
                 pcg_max_iters=3, background=(1.0, 1.0, 1.0), seed=0, deterministic=True,
                 threads=1, image_pyramid=True, jitter="level", rays_per_iter=None,
                 init_opacity=0.1, threshold=True):
        self.levels = levels
        self.iters_per_level = iters_per_level
        self.base_grid = base_grid
        self.base_face_res = base_face_res
        self.env_layers = env_layers
        self.aabb = aabb
        self.lambda_aux = lambda_aux
        self.backtrack_alpha = backtrack_alpha
        self.backtrack_cap = backtrack_cap
        self.pcg_eps_scale = pcg_eps_scale
        self.pcg_stall_ratio = pcg_stall_ratio
        self.pcg_max_iters = pcg_max_iters
        self.background = background
        self.seed = seed
        self.deterministic = deterministic
        self.threads = threads
        self.image_pyramid = image_pyramid
        self.jitter = jitter
        self.rays_per_iter = rays_per_iter
        self.init_opacity = init_opacity
        self.threshold = threshold

    def to_config(self) -> GnConfig:
        return GnConfig(
            levels=self.levels, iters_per_level=self.iters_per_level, base_grid=self.base_grid,
            base_face_res=self.base_face_res, env_layers=self.env_layers, aabb=self.aabb,
            lambda_aux=self.lambda_aux, backtrack_alpha=self.backtrack_alpha,
            backtrack_cap=self.backtrack_cap,
            pcg=PcgConfig(eps_scale=self.pcg_eps_scale, stall_ratio=self.pcg_stall_ratio,
                          max_iters=self.pcg_max_iters),
            background=tuple(check_color(self.background)), seed=self.seed,
            deterministic=self.deterministic, threads=self.threads,
            image_pyramid=self.image_pyramid, jitter=self.jitter,
            rays_per_iter=self.rays_per_iter, init_opacity=self.init_opacity)

    def fit(self, X, y=None):
        ds = check_dataset(X, y)
        self.scene_, self.report_ = solve_hierarchy(ds, self.to_config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "scene_"):
            raise NotFittedError("call fit before predict")

    def predict(self, X) -> np.ndarray:
        """Rendered images, shape (n_views, H, W, 3)."""
        self._check_fitted()
        cams = check_cameras(X)
        n_chunks = self.to_config().n_chunks
        return np.stack([render_view(self.scene_, c, self.threshold, self.background, n_chunks)
                         for c in cams])

    def foreground_masks(self, X) -> np.ndarray:
        self._check_fitted()
        return np.stack([foreground_mask(self.scene_, c) for c in check_cameras(X)])

    def score(self, X, y=None, masked=False) -> float:
        """Mean PSNR in dB over the views of ``X``."""
        ds = check_dataset(X, y)
        preds = self.predict(ds)
        masks = self.foreground_masks(ds) if masked else [None] * len(ds)
        return float(np.mean([psnr(p, t, m) for p, t, m in zip(preds, ds.images, masks)]))
