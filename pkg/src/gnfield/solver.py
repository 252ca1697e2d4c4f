"""Gauss-Newton driver: PCG inner solves, backtracking, and the level schedule."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .derivatives import gn_rhs, jacobi_diagonal, jtj_apply
from .forward import NonFiniteError, objective
from .rays import RayBatch, TraceConfig, camera_rays
from .scene import SIGMA, Scene, init_level, upsample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcgConfig:
    """Inner-solve settings.

    ``eps`` is an absolute bound on the squared residual norm; when None it
    is ``eps_scale`` times the initial squared residual norm. ``stall_ratio``
    None disables the stall exit (CG residual norms are not monotone, so an
    exact solve must not stop at the first uptick).
    """

    eps: float | None = None
    eps_scale: float = 1e-10
    stall_ratio: float | None = 0.85
    max_iters: int = 3

    def __post_init__(self):
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.eps_scale > 0:
            raise ValueError("eps_scale must be positive")
        if self.stall_ratio is not None and not 0 < self.stall_ratio < 1:
            raise ValueError("stall_ratio must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class PcgInfo:
    iterations: int
    residual_norm_sq: float
    reason: str
    history: list = field(default_factory=list)


class PcgBreakdown(FloatingPointError):
    pass


def pcg_solve(apply_A: Callable[[np.ndarray], np.ndarray], b: np.ndarray, M_diag: np.ndarray,
              cfg: PcgConfig = PcgConfig(), callback=None):
    """Preconditioned conjugate gradient from ``x0 = 0``.

    Stops when the squared residual norm drops below eps, when it shrinks by
    less than ``stall_ratio`` per iteration, or after ``max_iters``. Zero
    entries of ``M_diag`` are treated as 1.

    Returns
    -------
    x : ndarray
    info : PcgInfo
    """
    b = np.asarray(b, dtype=np.float64)
    M_diag = np.asarray(M_diag, dtype=np.float64)
    if np.any(M_diag < 0):
        raise ValueError("preconditioner diagonal must be non-negative")
    Minv = np.where(M_diag > 0, 1.0 / np.where(M_diag > 0, M_diag, 1.0), 1.0)
    x = np.zeros_like(b)
    r = b.copy()
    R_prev = float(r @ r)
    if not np.isfinite(R_prev):
        raise PcgBreakdown("non-finite right-hand side")
    eps = cfg.eps if cfg.eps is not None else cfg.eps_scale * R_prev
    history = [R_prev]
    if R_prev == 0.0:
        return x, PcgInfo(0, 0.0, "zero-rhs", history)
    z = Minv * r
    p = z.copy()
    rz = float(r @ z)
    k = 0
    while True:
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise PcgBreakdown(f"non-finite p^T A p at iteration {k}")
        if pAp <= 0.0:
            return x, PcgInfo(k, R_prev, "curvature", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        R = float(r @ r)
        if not np.isfinite(R):
            raise PcgBreakdown(f"non-finite residual at iteration {k}")
        k += 1
        history.append(R)
        if callback is not None:
            callback(k, x, r)
        if R < eps:
            return x, PcgInfo(k, R, "converged", history)
        if cfg.stall_ratio is not None and R / R_prev > cfg.stall_ratio:
            return x, PcgInfo(k, R, "stalled", history)
        if k >= cfg.max_iters:
            return x, PcgInfo(k, R, "max_iters", history)
        R_prev = R
        z = Minv * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p


def backtrack(error: Callable[[float], float], alpha: float = 0.7, cap: int = 16):
    """Geometric backtracking from gamma = 1.

    Returns (gamma, error(gamma)) for the trial preceding the first increase,
    or the last trial after ``cap`` strictly decreasing evaluations.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    gamma = 1.0
    mu_prev = np.inf
    best = (0.0, np.inf)
    for _ in range(cap):
        mu = error(gamma)
        if not np.isfinite(mu):
            mu = np.inf
        if mu > mu_prev:
            return gamma / alpha, mu_prev
        if np.isfinite(mu):
            best = (gamma, mu)
        mu_prev = mu
        gamma *= alpha
    if not np.isfinite(best[1]):
        logger.warning("line search: objective non-finite at every trial, step rejected")
        return 0.0, np.inf
    return gamma / alpha, mu_prev


def apply_step(scene: Scene, direction: np.ndarray, gamma: float) -> np.ndarray:
    """Trial parameters ``x + gamma * direction`` with sigma projected to >= 0."""
    x = scene.params.astype(np.float64) + gamma * direction
    x[SIGMA::4] = np.maximum(x[SIGMA::4], 0.0)
    with np.errstate(over="ignore"):
        return x.astype(scene.dtype)


def line_search(scene: Scene, direction: np.ndarray, rays: RayBatch, cfg: TraceConfig,
                alpha: float = 0.7, cap: int = 16):
    """Backtracking on the full objective along ``direction``. Returns (gamma, objective)."""
    if not np.all(np.isfinite(direction)):
        raise ValueError("line search direction is not finite")

    def error(gamma):
        try:
            return objective(rays, scene, cfg, params=apply_step(scene, direction, gamma))
        except NonFiniteError:
            return np.inf

    return backtrack(error, alpha, cap)


@dataclass
class GnConfig:
    """Reconstruction settings. Defaults follow the published schedule."""

    levels: int = 5
    iters_per_level: int = 30
    base_grid: tuple = (32, 32, 32)
    base_face_res: int = 32
    env_layers: int = 4
    aabb: tuple = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
    lambda_aux: float = 0.1
    backtrack_alpha: float = 0.7
    backtrack_cap: int = 16
    pcg: PcgConfig = field(default_factory=PcgConfig)
    background: tuple = (1.0, 1.0, 1.0)
    seed: int = 0
    deterministic: bool = True
    threads: int = 1
    image_pyramid: bool = True
    jitter: str = "level"
    rays_per_iter: int | None = None
    init_opacity: float = 0.1
    sigma_init: float | None = None
    env_sigma_init: float = 0.05
    dtype: str = "float32"

    def __post_init__(self):
        if self.levels < 1 or self.iters_per_level < 0:
            raise ValueError("levels must be >= 1 and iters_per_level >= 0")
        if not 0 < self.backtrack_alpha < 1:
            raise ValueError("backtrack_alpha must lie in (0, 1)")
        if self.backtrack_cap < 1:
            raise ValueError("backtrack_cap must be >= 1")
        if self.jitter not in ("level", "iteration", "off"):
            raise ValueError(f"jitter must be 'level', 'iteration' or 'off', got {self.jitter!r}")
        if not 0 <= self.init_opacity < 1:
            raise ValueError("init_opacity must lie in [0, 1)")
        if isinstance(self.pcg, dict):
            self.pcg = PcgConfig(**self.pcg)
        self.base_grid = tuple(int(v) for v in self.base_grid)
        self.aabb = tuple(tuple(float(v) for v in corner) for corner in self.aabb)
        self.background = tuple(float(v) for v in self.background)

    def initial_sigma(self) -> float:
        """Grid sigma giving ``init_opacity`` per base-level cell, unless set explicitly."""
        if self.sigma_init is not None:
            return float(self.sigma_init)
        lo, hi = np.array(self.aabb)
        cell = float(np.min((hi - lo) / np.array(self.base_grid)))
        return float(-np.log1p(-self.init_opacity) / cell)

    @property
    def n_chunks(self) -> int:
        # fixed partition keeps the reduction order independent of the thread count
        return 8 if self.deterministic else max(1, int(self.threads))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationRecord:
    level: int
    iteration: int
    objective: float
    objective_before: float
    step_scale: float
    pcg_iters: int
    accepted: bool
    wall_time: float
    n_rays: int
    holdout_psnr: float | None = None


@dataclass
class SolveReport:
    rows: list = field(default_factory=list)
    checkpoint: str | None = None

    def append(self, row: IterationRecord) -> None:
        self.rows.append(row)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.rows)

    def objectives(self, level=None) -> np.ndarray:
        return np.array([r.objective for r in self.rows if level is None or r.level == level])


def gn_iteration(scene: Scene, rays: RayBatch, cfg: TraceConfig, pcg_cfg: PcgConfig = PcgConfig(),
                 backtrack_alpha: float = 0.7, backtrack_cap: int = 16, level: int = 0,
                 iteration: int = 0, active=None):
    """One Gauss-Newton step; returns (new scene, IterationRecord).

    ``active`` optionally masks which parameters may move (others are frozen).
    """
    t0 = time.perf_counter()
    f0 = objective(rays, scene, cfg)
    b = gn_rhs(rays, scene, cfg)
    M = jacobi_diagonal(rays, scene, cfg)
    free = M > 0
    if active is not None:
        free &= active
    # sigma pinned at the bound with the descent direction pointing outward stays put
    pinned = np.zeros_like(free)
    pinned[SIGMA::4] = (scene.params[SIGMA::4] <= 0) & (b[SIGMA::4] < 0)
    free &= ~pinned
    b = np.where(free, b, 0.0)

    def apply_A(p):
        q = jtj_apply(rays, scene, np.where(free, p, 0.0), cfg)
        return np.where(free, q, 0.0)

    def record(f, gamma, pcg_iters, accepted):
        return IterationRecord(level, iteration, f, f0, gamma, pcg_iters, accepted,
                               time.perf_counter() - t0, len(rays))

    try:
        delta, info = pcg_solve(apply_A, b, np.where(free, M, 0.0), pcg_cfg)
    except PcgBreakdown as exc:
        logger.warning("PCG aborted at level %d iteration %d: %s", level, iteration, exc)
        return scene, record(f0, 0.0, 0, False)
    delta[~free] = 0.0
    if not np.any(delta):
        return scene, record(f0, 0.0, info.iterations, False)
    gamma, f1 = line_search(scene, delta, rays, cfg, backtrack_alpha, backtrack_cap)
    if gamma == 0.0 or not f1 <= f0:
        # no trial improved on the current point
        return scene, record(f0, 0.0, info.iterations, False)
    new = scene.with_params(apply_step(scene, delta, gamma))
    return new, record(f1, gamma, info.iterations, True)


def _downscale(image: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return image
    H, W = image.shape[:2]
    h, w = H // factor, W // factor
    if h * factor == H and w * factor == W:
        return image.reshape(h, factor, w, factor, 3).mean(axis=(1, 3))
    from PIL import Image
    return np.stack([np.asarray(Image.fromarray(image[..., c].astype(np.float32), "F")
                                .resize((w, h), Image.BOX)) for c in range(3)], axis=-1).astype(np.float64)


def level_rays(dataset, factor: int, jitter: bool, counter: int, seed: int) -> RayBatch:
    """All pixel rays of the training images downscaled by ``factor``."""
    batches = []
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        small = _downscale(np.asarray(img, np.float64), factor)
        c = cam.scaled(small.shape[1], small.shape[0])
        batches.append(camera_rays(c, small, image_index=i, jitter=jitter, counter=counter, seed=seed))
    return RayBatch.concat(batches)


def solve_hierarchy(dataset, cfg: GnConfig, scene: Scene | None = None, on_level_end=None,
                    holdout=None, log_stream=None):
    """Coarse-to-fine reconstruction.

    Each level runs ``iters_per_level`` Gauss-Newton iterations, then the scene
    is upsampled (except after the last level). Returns (scene, SolveReport).
    """
    if len(dataset.cameras) == 0:
        raise ValueError("dataset has no images")
    if scene is None:
        scene = init_level(cfg.base_grid, cfg.base_face_res, cfg.env_layers, cfg.seed,
                           aabb=cfg.aabb, sigma_init=cfg.initial_sigma(),
                           env_sigma_init=cfg.env_sigma_init, dtype=np.dtype(cfg.dtype))
    report = SolveReport()
    rng = np.random.default_rng(cfg.seed)
    for level in range(cfg.levels):
        factor = 2 ** (cfg.levels - 1 - level) if cfg.image_pyramid else 1
        step = scene.min_step()
        jitter = cfg.jitter != "off"
        rays_level = None
        for it in range(cfg.iters_per_level):
            counter = level if cfg.jitter == "level" else level * 100003 + it
            if rays_level is None or cfg.jitter == "iteration":
                rays_level = level_rays(dataset, factor, jitter, counter, cfg.seed)
            rays = rays_level
            if cfg.rays_per_iter and cfg.rays_per_iter < len(rays):
                rays = rays.subset(np.sort(rng.choice(len(rays), cfg.rays_per_iter, replace=False)))
            tcfg = TraceConfig(step, cfg.background, cfg.lambda_aux, jitter, counter, cfg.seed,
                               cfg.n_chunks)
            scene, row = gn_iteration(scene, rays, tcfg, cfg.pcg, cfg.backtrack_alpha,
                                      cfg.backtrack_cap, level, it)
            if holdout is not None:
                row.holdout_psnr = holdout(scene)
            report.append(row)
            if log_stream is not None:
                log_stream.write(json.dumps(asdict(row)) + "\n")
                log_stream.flush()
            logger.info("level %d iter %d objective %.6g step %.3g pcg %d (%.2fs)", level, it,
                        row.objective, row.step_scale, row.pcg_iters, row.wall_time)
        if on_level_end is not None:
            on_level_end(level, scene)
        if level < cfg.levels - 1:
            scene = upsample(scene)
    return scene, report
