"""Discrete volume rendering, per-ray residuals and the least-squares objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .rays import Ray, RayBatch, RaySampleList, TraceConfig, build_samples
from .scene import Scene


class NonFiniteError(FloatingPointError):
    """Raised when a forward evaluation produces NaN or inf."""


@dataclass
class RayRadiance:
    color: np.ndarray
    transmittance: float
    grid_transmittance: float
    per_sample_alpha: np.ndarray | None = None


@dataclass
class PixelResidualSet:
    color_res: np.ndarray
    aux_res: float
    lambda_aux: float

    def as_array(self) -> np.ndarray:
        return np.append(self.color_res, self.aux_res)


def sample_values(samples: RaySampleList, params: np.ndarray):
    """Interpolated sigma (N,) and color (N, 3) for every sample."""
    n = len(samples)
    sig, col = np.empty(n), np.empty((n, 3))
    K.interpolate(params, samples.cells, samples.weights, n, sig, col)
    return sig, col


def accumulate(samples: RaySampleList, scene: Scene, background=(0.0, 0.0, 0.0),
               ray_id=None) -> RayRadiance:
    """Front-to-back composite of one ray's samples over ``background``."""
    sig, col = sample_values(samples, scene.params)
    out = np.empty(3)
    n = len(samples)
    T, T_grid = K.composite(sig, col, samples.delta, n, samples.n_grid,
                            np.asarray(background, np.float64), out)
    if not (np.all(np.isfinite(out)) and np.isfinite(T)):
        raise NonFiniteError(f"non-finite radiance on ray {ray_id}")
    alpha = 1.0 - np.exp(-sig * samples.delta)
    return RayRadiance(out, float(T), float(T_grid), alpha)


def aux_residual(transmittance: float, lambda_aux: float) -> float:
    """Opacity regularizer, zero at T = 0 and T = 1 and ``lambda_aux`` at T = 0.5."""
    return float(K.aux_value(float(transmittance), float(lambda_aux)))


def ray_residuals(ray: Ray, scene: Scene, cfg: TraceConfig) -> PixelResidualSet:
    samples = build_samples(scene, ray, cfg.step, cfg.jitter, cfg.counter, cfg.seed)
    rad = accumulate(samples, scene, cfg.bg, ray_id=ray.key)
    return PixelResidualSet(rad.color - ray.target_color,
                            aux_residual(rad.grid_transmittance, cfg.lambda_aux), cfg.lambda_aux)


def _empty_vec(cfg: TraceConfig, n: int = 0) -> np.ndarray:
    return np.zeros((cfg.n_chunks, n))


def run_pass(mode, rays: RayBatch, scene: Scene, cfg: TraceConfig, pvec=None, params=None):
    """Dispatch one batched kernel pass. Returns (residuals, grid T, reduced vector)."""
    params = scene.params if params is None else params
    R = len(rays)
    if mode == K.MODE_RESIDUALS:
        out_res, out_tg, out_vec = np.empty((R, 4)), np.empty(R), _empty_vec(cfg)
    else:
        out_res, out_tg = np.empty((0, 4)), np.empty(0)
        out_vec = _empty_vec(cfg, scene.n_params)
    if pvec is None:
        pvec = np.empty(0)
    K.ray_pass(mode, rays.origins, rays.dirs, rays.targets, rays.keys, *scene.geometry(),
               params, np.ascontiguousarray(pvec, dtype=np.float64), cfg.bg,
               float(cfg.lambda_aux), float(cfg.step), bool(cfg.jitter), int(cfg.counter),
               int(cfg.seed), int(cfg.n_chunks), scene.max_samples(cfg.step),
               out_res, out_tg, out_vec)
    vec = out_vec[0] if cfg.n_chunks == 1 else out_vec.sum(axis=0)
    return out_res, out_tg, vec


def residuals(rays: RayBatch, scene: Scene, cfg: TraceConfig, params=None):
    """Residual matrix (R, 4): three color residuals then the aux residual, plus grid T (R,)."""
    res, tg, _ = run_pass(K.MODE_RESIDUALS, rays, scene, cfg, params=params)
    if not np.all(np.isfinite(res)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(res), axis=1))[0])
        raise NonFiniteError(f"non-finite residual on ray {bad} (key {int(rays.keys[bad])})")
    return res, tg


def objective(rays: RayBatch, scene: Scene, cfg: TraceConfig, params=None) -> float:
    """Half the sum of squared residuals over all rays (color and aux)."""
    if len(rays) == 0:
        raise ValueError("objective needs a non-empty ray set")
    res, _ = residuals(rays, scene, cfg, params=params)
    return 0.5 * float(np.sum(res * res))
