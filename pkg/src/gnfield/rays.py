"""Pinhole cameras, per-pixel rays, ray/box intersection and sample lists.

Camera convention: the pose maps camera to world, the camera looks down its
local -z axis, image +x is right and image +y is up (row 0 is the top row).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .scene import N_CHANNELS, Scene
from .validation import check_color, check_pose


@dataclass(frozen=True)
class Camera:
    pose: np.ndarray
    focal: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "pose", check_pose(self.pose))
        if not self.focal > 0:
            raise ValueError(f"focal must be positive, got {self.focal}")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def origin(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    def scaled(self, width: int, height: int) -> "Camera":
        """Same pose and field of view at a different resolution."""
        return Camera(self.pose, self.focal * width / self.width, width, height)

    def directions(self, cols, rows) -> np.ndarray:
        """Unit world-space directions through continuous pixel positions."""
        x = (np.asarray(cols, dtype=np.float64) - 0.5 * self.width) / self.focal
        y = -(np.asarray(rows, dtype=np.float64) - 0.5 * self.height) / self.focal
        d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
        d = d_cam @ self.pose[:3, :3].T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -fwd
    pose[:3, 3] = eye
    return pose


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray
    pixel: tuple[int, int] = (0, 0)
    target_color: np.ndarray = field(default_factory=lambda: np.zeros(3))
    key: int = 0

    def __post_init__(self):
        d = np.asarray(self.dir, dtype=np.float64)
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "dir", d / norm)
        object.__setattr__(self, "target_color", np.asarray(self.target_color, dtype=np.float64))


def generate_ray(cam: Camera, row: int, col: int, jitter=(0.5, 0.5), target=None) -> Ray:
    """Ray through pixel position ``(col + u, row + v)``."""
    if not (0 <= row < cam.height and 0 <= col < cam.width):
        raise ValueError(f"pixel ({row}, {col}) outside {cam.height}x{cam.width} image")
    u, v = jitter
    if not (0.0 <= u < 1.0 and 0.0 <= v < 1.0):
        raise ValueError(f"jitter must lie in [0, 1)^2, got {jitter}")
    d = cam.directions(col + u, row + v)
    t = np.zeros(3) if target is None else target
    return Ray(cam.origin, d, (row, col), t, row * cam.width + col)


@dataclass
class RayBatch:
    """Structure-of-arrays ray set: origins, dirs, targets (R, 3) and jitter keys (R,)."""

    origins: np.ndarray
    dirs: np.ndarray
    targets: np.ndarray
    keys: np.ndarray

    def __post_init__(self):
        self.origins = np.ascontiguousarray(self.origins, dtype=np.float64).reshape(-1, 3)
        self.dirs = np.ascontiguousarray(self.dirs, dtype=np.float64).reshape(-1, 3)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64).reshape(-1, 3)
        self.keys = np.ascontiguousarray(self.keys, dtype=np.uint64).reshape(-1)
        n = len(self.origins)
        if not (len(self.dirs) == len(self.targets) == len(self.keys) == n):
            raise ValueError("ray batch arrays have inconsistent lengths")

    def __len__(self):
        return len(self.origins)

    def subset(self, idx) -> "RayBatch":
        return RayBatch(self.origins[idx], self.dirs[idx], self.targets[idx], self.keys[idx])

    @classmethod
    def from_rays(cls, rays) -> "RayBatch":
        rays = list(rays)
        return cls(np.array([r.origin for r in rays]), np.array([r.dir for r in rays]),
                   np.array([r.target_color for r in rays]),
                   np.array([r.key for r in rays], dtype=np.uint64))

    @classmethod
    def concat(cls, batches) -> "RayBatch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("origins", "dirs", "targets", "keys")))

    def ray(self, i: int) -> Ray:
        return Ray(self.origins[i], self.dirs[i], (0, 0), self.targets[i], int(self.keys[i]))


def camera_rays(cam: Camera, image=None, image_index: int = 0, jitter: bool = False,
                counter: int = 0, seed: int = 0) -> RayBatch:
    """One ray per pixel, row-major. Pixel offsets are hashed per ray when ``jitter``."""
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    keys = (np.uint64(image_index) << np.uint64(32)) + (rows * cam.width + cols).astype(np.uint64)
    if jitter:
        uv = np.empty((keys.size, 2))
        K.pixel_jitter(keys, counter, seed, uv)
    else:
        uv = np.full((keys.size, 2), 0.5)
    dirs = cam.directions(cols + uv[:, 0], rows + uv[:, 1])
    origins = np.broadcast_to(cam.origin, dirs.shape)
    targets = np.zeros_like(dirs) if image is None else np.asarray(image, np.float64).reshape(-1, 3)
    return RayBatch(origins, dirs, targets, keys)


def intersect_aabb(ray: Ray, box_min, box_max):
    """``(t_near, t_far)`` entry/exit parameters, or None on a miss."""
    hit, tn, tf = K.slab(ray.origin, ray.dir, np.asarray(box_min, np.float64),
                         np.asarray(box_max, np.float64))
    return (tn, tf) if hit else None


@dataclass(frozen=True)
class TraceConfig:
    """Sampling and residual settings shared by every ray pass.

    ``counter`` feeds the jitter hash; the solver bumps it per level (or per
    iteration) so sample positions change between rounds but not within one.
    """

    step: float
    background: tuple = (1.0, 1.0, 1.0)
    lambda_aux: float = 0.1
    jitter: bool = True
    counter: int = 0
    seed: int = 0
    n_chunks: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.n_chunks < 1:
            raise ValueError("n_chunks must be >= 1")
        if self.seed < 0 or self.counter < 0:
            raise ValueError("seed and counter must be non-negative")
        object.__setattr__(self, "background", tuple(check_color(self.background)))

    @property
    def bg(self) -> np.ndarray:
        return np.array(self.background, dtype=np.float64)


@dataclass
class RaySampleList:
    """Ordered samples of one ray: grid samples, then env samples innermost-out.

    ``cells`` and ``weights`` are (N, 8) footprints over cell ids; env samples
    use the first four entries. ``footprint(j, channel)`` gives parameter
    slots and weights.
    """

    cells: np.ndarray
    weights: np.ndarray
    delta: np.ndarray
    t: np.ndarray
    n_grid: int
    entry_t: float
    exit_t: float

    def __len__(self):
        return len(self.delta)

    @property
    def kinds(self) -> list[str]:
        return ["grid"] * self.n_grid + [f"env-{k}" for k in range(len(self) - self.n_grid)]

    def footprint(self, j: int, channel: int):
        keep = self.weights[j] > 0
        return N_CHANNELS * self.cells[j][keep] + channel, self.weights[j][keep]


def build_samples(scene: Scene, ray: Ray, step: float, jitter: bool = False,
                  counter: int = 0, seed: int = 0) -> RaySampleList:
    """Sample list for one ray (grid march followed by env-layer hits)."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    cap = scene.max_samples(step)
    cells = np.empty((cap, K.FP), np.int64)
    wts = np.empty((cap, K.FP))
    delta = np.empty(cap)
    tval = np.empty(cap)
    n, n_grid, t_near, t_far = K.march(ray.origin, ray.dir, np.uint64(ray.key), *scene.geometry(),
                                       float(step), bool(jitter), int(counter), int(seed),
                                       cells, wts, delta, tval)
    return RaySampleList(cells[:n].copy(), wts[:n].copy(), delta[:n].copy(), tval[:n].copy(),
                         int(n_grid), float(t_near), float(t_far))
