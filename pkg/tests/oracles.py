"""Independent reference implementations used by the tests.

Nothing here calls the analytic derivative code; Jacobians come from central
finite differences of the forward residuals.
"""
from __future__ import annotations

import numpy as np

from gnfield.forward import residuals
from gnfield.rays import Ray, RayBatch, intersect_aabb
from gnfield.scene import SIGMA, init_level


def random_scene(dims=(4, 4, 4), face_res=2, n_layers=1, seed=0, sigma_max=3.0,
                 env_sigma_max=2.0, half=1.0):
    """float64 scene with uniform random colors and sigma."""
    sc = init_level(dims, face_res, n_layers, rng_seed=seed, aabb=((-half,) * 3, (half,) * 3),
                    dtype=np.float64)
    rng = np.random.default_rng(seed + 1000)
    p = sc.params.copy()
    n_grid = 4 * sc.n_cells
    p[SIGMA:n_grid:4] = rng.uniform(0.0, sigma_max, sc.n_cells)
    p[n_grid + SIGMA::4] = rng.uniform(0.0, env_sigma_max, (p.size - n_grid) // 4)
    return sc.with_params(p)


def random_rays(scene, n, seed=0, radius=3.0, spread=0.8):
    """Rays from a sphere of ``radius`` aimed at random points inside the grid box."""
    rng = np.random.default_rng(seed)
    half = scene.grid.half_extent
    o = rng.normal(size=(n, 3))
    o *= radius / np.linalg.norm(o, axis=1, keepdims=True)
    aim = rng.uniform(-spread * half, spread * half, (n, 3))
    d = aim - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    targets = rng.uniform(0.0, 1.0, (n, 3))
    keys = np.arange(n, dtype=np.uint64)
    return RayBatch(o, d, targets, keys)


def chord(scene, rays, i):
    hit = intersect_aabb(rays.ray(i), scene.grid.aabb_min, scene.grid.aabb_max)
    return None if hit is None else max(hit[1] - max(hit[0], 0.0), 0.0)


def fd_jacobian(rays, scene, cfg, columns=None, h=1e-6):
    """Central-difference Jacobian of the flattened (R*4,) residual vector."""
    base = scene.params.astype(np.float64)
    cols = np.arange(base.size) if columns is None else np.asarray(columns)
    J = np.zeros((4 * len(rays), len(cols)))
    for k, c in enumerate(cols):
        p = base.copy()
        p[c] += h
        rp = residuals(rays, scene, cfg, params=p)[0]
        p[c] -= 2 * h
        rm = residuals(rays, scene, cfg, params=p)[0]
        J[:, k] = (rp - rm).ravel() / (2 * h)
    return J


def slab_oracle(origin, direction, lo, hi):
    """Brute force: intersect the ray with all six face planes and keep points on the box."""
    ts = []
    for axis in range(3):
        if direction[axis] == 0.0:
            continue
        for plane in (lo[axis], hi[axis]):
            t = (plane - origin[axis]) / direction[axis]
            p = origin + t * direction
            others = [a for a in range(3) if a != axis]
            if all(lo[a] - 1e-9 <= p[a] <= hi[a] + 1e-9 for a in others):
                ts.append(t)
    if len(ts) < 2:
        return None
    t0, t1 = min(ts), max(ts)
    if t1 < 0 or t1 - t0 < 1e-12:
        return None
    return t0, t1


def make_ray(origin, direction, target=(0.0, 0.0, 0.0), key=0):
    return Ray(np.asarray(origin, float), np.asarray(direction, float), (0, 0),
               np.asarray(target, float), key)
