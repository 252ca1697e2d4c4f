"""Analytic residual gradients and matrix-free Gauss-Newton products.

Per ray there are four residuals: ``H_c - C_c`` for c in r, g, b and the aux
opacity residual. Sample partials come from one reverse sweep; they reach
parameters through each sample's interpolation footprint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .forward import run_pass, sample_values
from .rays import RayBatch, RaySampleList, TraceConfig
from .scene import N_CHANNELS, SIGMA, Scene


@dataclass
class SamplePartials:
    """Partials of one ray's residuals with respect to per-sample values.

    d_color[j]      dH_c / dc_{j,c}   (same for all three channels)
    d_sigma[j, c]   dH_c / dsigma_j
    d_aux[j]        d(aux residual) / dsigma_j  (zero for env samples)
    """

    d_color: np.ndarray
    d_sigma: np.ndarray
    d_aux: np.ndarray


def backward_partials(samples: RaySampleList, scene: Scene, background=(0.0, 0.0, 0.0),
                      lambda_aux: float = 0.0) -> SamplePartials:
    n = len(samples)
    if n == 0:
        raise ValueError("backward_partials needs at least one sample")
    sig, col = sample_values(samples, scene.params)
    bg = np.asarray(background, np.float64)
    T_final, T_grid = K.composite(sig, col, samples.delta, n, samples.n_grid, bg, np.empty(3))
    d_color, d_sigma, d_aux = np.empty(n), np.empty((n, 3)), np.empty(n)
    K.backward_sweep(sig, col, samples.delta, n, samples.n_grid, bg, T_final, T_grid,
                     float(lambda_aux), d_color, d_sigma, d_aux)
    return SamplePartials(d_color, d_sigma, d_aux)


def ray_gradients(samples: RaySampleList, partials: SamplePartials, n_params: int) -> np.ndarray:
    """Dense gradient rows (4, n_params) of one ray's residuals."""
    rows = np.zeros((4, n_params))
    for j in range(len(samples)):
        for cell, w in zip(samples.cells[j], samples.weights[j]):
            if w == 0.0:
                continue
            base = N_CHANNELS * cell
            for c in range(3):
                rows[c, base + c] += w * partials.d_color[j]
                rows[c, base + SIGMA] += w * partials.d_sigma[j, c]
            rows[3, base + SIGMA] += w * partials.d_aux[j]
    return rows


def scatter(partials: SamplePartials, samples: RaySampleList, weight, out: np.ndarray) -> None:
    """``out += J_ray^T weight`` for one ray, with ``weight`` one scalar per residual.

    A scalar ``weight`` is broadcast over all four residuals.
    """
    weight = np.broadcast_to(np.asarray(weight, np.float64), (4,))
    for j in range(len(samples)):
        gs = partials.d_sigma[j] @ weight[:3] + partials.d_aux[j] * weight[3]
        for cell, w in zip(samples.cells[j], samples.weights[j]):
            if w == 0.0:
                continue
            base = N_CHANNELS * int(cell)
            if base + SIGMA >= out.size:
                raise IndexError(f"footprint slot {base + SIGMA} outside vector of {out.size}")
            out[base:base + 3] += w * partials.d_color[j] * weight[:3]
            out[base + SIGMA] += w * gs


def gn_rhs(rays: RayBatch, scene: Scene, cfg: TraceConfig) -> np.ndarray:
    """Right-hand side ``-J^T r`` of the normal equations."""
    return run_pass(K.MODE_RHS, rays, scene, cfg)[2]


def jtj_apply(rays: RayBatch, scene: Scene, p: np.ndarray, cfg: TraceConfig) -> np.ndarray:
    """``J^T J p`` as a sum of rank-one ray contributions; J is never formed."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (scene.n_params,):
        raise ValueError(f"p must have shape ({scene.n_params},), got {p.shape}")
    return run_pass(K.MODE_JTJ, rays, scene, cfg, pvec=p)[2]


def jacobi_diagonal(rays: RayBatch, scene: Scene, cfg: TraceConfig) -> np.ndarray:
    """``diag(J^T J)``: per parameter, the sum over residuals of squared partials."""
    if len(rays) == 0:
        return np.zeros(scene.n_params)
    return run_pass(K.MODE_DIAG, rays, scene, cfg)[2]
