"""Scene representation: a voxel grid wrapped in nested cube environment maps.

All parameters live in a single flat vector. Layout::

    grid cells first, z-major: cell = (z * Y + y) * X + x
    then env layers innermost-out, texel = (face * s + v) * s + u
    slot = 4 * cell + channel      (channels: r, g, b, sigma)

Faces are ordered +x, -x, +y, -y, +z, -z. Within a face ``u`` runs along the
lower-numbered remaining axis and ``v`` along the higher one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .validation import check_positive_int

N_CHANNELS = 4
SIGMA = 3
SIGMA_INIT = 0.05
FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


@dataclass(frozen=True)
class VoxelGrid:
    dims: tuple[int, int, int]
    aabb_min: tuple[float, float, float]
    aabb_max: tuple[float, float, float]

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 2 for d in self.dims):
            raise ValueError(f"grid dims must be a triple >= 2, got {self.dims}")
        lo, hi = np.asarray(self.aabb_min, float), np.asarray(self.aabb_max, float)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
            raise ValueError(f"invalid aabb {self.aabb_min} .. {self.aabb_max}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "aabb_min", tuple(float(v) for v in lo))
        object.__setattr__(self, "aabb_max", tuple(float(v) for v in hi))

    @property
    def n_cells(self) -> int:
        X, Y, Z = self.dims
        return X * Y * Z

    @property
    def cell_size(self) -> np.ndarray:
        return (np.array(self.aabb_max) - np.array(self.aabb_min)) / np.array(self.dims)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.aabb_min) + np.array(self.aabb_max))

    @property
    def half_extent(self) -> float:
        """Largest half side of the box; env layers are scaled from it."""
        return float(np.max(0.5 * (np.array(self.aabb_max) - np.array(self.aabb_min))))

    def cell_centers(self, axis: int) -> np.ndarray:
        lo = self.aabb_min[axis]
        return lo + (np.arange(self.dims[axis]) + 0.5) * self.cell_size[axis]


@dataclass(frozen=True)
class EnvLayer:
    face_res: int
    half_extent: float

    def __post_init__(self):
        if int(self.face_res) < 2:
            raise ValueError(f"env face_res must be >= 2, got {self.face_res}")
        if not self.half_extent > 0:
            raise ValueError(f"env half_extent must be positive, got {self.half_extent}")
        object.__setattr__(self, "face_res", int(self.face_res))
        object.__setattr__(self, "half_extent", float(self.half_extent))

    @property
    def n_texels(self) -> int:
        return 6 * self.face_res**2


def layer_schedule(grid_half_extent: float, n_layers: int) -> list[float]:
    """Half extents ``H * (1 + k)**2`` for ``k = 1..n_layers``."""
    return [grid_half_extent * (1 + k) ** 2 for k in range(1, n_layers + 1)]


class GridSlot(NamedTuple):
    x: int
    y: int
    z: int
    channel: int


class EnvSlot(NamedTuple):
    layer: int
    face: int
    u: int
    v: int
    channel: int


@dataclass
class Scene:
    """Voxel grid plus env hierarchy, backed by one flat parameter array.

    ``params`` is stored at ``dtype`` (float32 by default, matching the
    checkpoint payload). Kernels read it as-is and compute in float64.
    """

    grid: VoxelGrid
    layers: list[EnvLayer]
    params: np.ndarray
    _geom: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.layers = list(self.layers)
        for inner, outer in zip(self.layers, self.layers[1:]):
            if not outer.half_extent > inner.half_extent:
                raise ValueError("env layer half extents must be strictly increasing")
        # every layer must enclose the grid box
        span = np.maximum(np.abs(np.array(self.grid.aabb_min) - self.grid.center),
                          np.abs(np.array(self.grid.aabb_max) - self.grid.center))
        for layer in self.layers:
            if not layer.half_extent > span.max():
                raise ValueError(f"env layer {layer.half_extent} does not enclose the grid")
        self.params = np.ascontiguousarray(self.params)
        if self.params.ndim != 1 or self.params.size != self.n_params:
            raise ValueError(
                f"parameter vector has {self.params.size} entries, scene needs {self.n_params}")

    # sizes and offsets ----------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.grid.n_cells + sum(layer.n_texels for layer in self.layers)

    @property
    def n_params(self) -> int:
        return N_CHANNELS * self.n_cells

    @property
    def dtype(self):
        return self.params.dtype

    def layer_cell_offsets(self) -> np.ndarray:
        offsets, off = [], self.grid.n_cells
        for layer in self.layers:
            offsets.append(off)
            off += layer.n_texels
        return np.array(offsets, dtype=np.int64)

    @property
    def center(self) -> np.ndarray:
        return self.grid.center

    # views ------------------------------------------------------------------
    @property
    def grid_params(self) -> np.ndarray:
        """View of the grid block shaped (Z, Y, X, 4)."""
        X, Y, Z = self.grid.dims
        return self.params[: N_CHANNELS * self.grid.n_cells].reshape(Z, Y, X, N_CHANNELS)

    def layer_params(self, k: int) -> np.ndarray:
        """View of env layer ``k`` shaped (6, s, s, 4), indexed [face, v, u, channel]."""
        s = self.layers[k].face_res
        start = N_CHANNELS * int(self.layer_cell_offsets()[k])
        return self.params[start: start + N_CHANNELS * 6 * s * s].reshape(6, s, s, N_CHANNELS)

    def sigma_slots(self) -> np.ndarray:
        return np.arange(SIGMA, self.n_params, N_CHANNELS)

    def copy(self, params: np.ndarray | None = None) -> "Scene":
        p = self.params.copy() if params is None else np.asarray(params, dtype=self.dtype)
        return Scene(self.grid, list(self.layers), p)

    def with_params(self, params: np.ndarray) -> "Scene":
        """Same geometry, new parameter array (cast to this scene's dtype)."""
        return Scene(self.grid, self.layers, np.asarray(params, dtype=self.dtype), self._geom)

    def geometry(self) -> tuple:
        """Packed geometry arrays consumed by the numba kernels."""
        if self._geom is None:
            g = self.grid
            self._geom = (
                np.array(g.aabb_min, dtype=np.float64),
                np.array(g.aabb_max, dtype=np.float64),
                np.array(g.dims, dtype=np.int64),
                g.cell_size.astype(np.float64),
                np.array([l.half_extent for l in self.layers], dtype=np.float64),
                np.array([l.face_res for l in self.layers], dtype=np.int64),
                self.layer_cell_offsets(),
                g.center.astype(np.float64),
            )
        return self._geom

    def min_step(self) -> float:
        """Shortest voxel side, the default raymarch step."""
        return float(self.grid.cell_size.min())

    def max_samples(self, step: float) -> int:
        diag = float(np.linalg.norm(np.array(self.grid.aabb_max) - np.array(self.grid.aabb_min)))
        return int(np.ceil(diag / step)) + 2 + len(self.layers)


def _check_level_spec(grid_dims, env_face_res, env_layer_count):
    dims = tuple(int(d) for d in grid_dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"grid_dims must be three positive integers, got {grid_dims}")
    if env_layer_count < 0:
        raise ValueError(f"env_layer_count must be >= 0, got {env_layer_count}")
    if env_layer_count > 0:
        check_positive_int(env_face_res, "env_face_res")
    return dims


def init_level(grid_dims, env_face_res: int, env_layer_count: int, rng_seed: int = 0,
               aabb=((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)), sigma_init: float = SIGMA_INIT,
               env_sigma_init: float | None = None, dtype=np.float32) -> Scene:
    """Random starting scene: colors ~ U(0, 1), sigma constant and small.

    ``env_sigma_init`` defaults to ``sigma_init``.
    """
    dims = _check_level_spec(grid_dims, env_face_res, env_layer_count)
    grid = VoxelGrid(dims, tuple(aabb[0]), tuple(aabb[1]))
    layers = [EnvLayer(env_face_res, h) for h in layer_schedule(grid.half_extent, env_layer_count)]
    n_cells = grid.n_cells + sum(l.n_texels for l in layers)
    rng = np.random.default_rng(rng_seed)
    values = np.empty((n_cells, N_CHANNELS), dtype=np.float64)
    values[:, :3] = rng.random((n_cells, 3))
    values[:, SIGMA] = sigma_init
    values[grid.n_cells:, SIGMA] = sigma_init if env_sigma_init is None else env_sigma_init
    return Scene(grid, layers, values.astype(dtype).ravel())


def empty_scene(grid_dims, aabb, layers=(), dtype=np.float64) -> Scene:
    """All-zero scene (transparent, black) with explicit env layers."""
    grid = VoxelGrid(tuple(grid_dims), tuple(aabb[0]), tuple(aabb[1]))
    layers = [l if isinstance(l, EnvLayer) else EnvLayer(*l) for l in layers]
    n_cells = grid.n_cells + sum(l.n_texels for l in layers)
    return Scene(grid, layers, np.zeros(N_CHANNELS * n_cells, dtype=dtype))


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    """Double ``a`` along ``axis`` by linear interpolation at fine cell centers.

    Fine centers sit a quarter coarse cell either side of each coarse center;
    the outermost half cells are linearly extrapolated so ramps survive intact.
    """
    a = np.moveaxis(a, axis, 0)
    ext = np.concatenate([2 * a[:1] - a[1:2], a, 2 * a[-1:] - a[-2:-1]], axis=0)
    fine = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
    fine[0::2] = 0.75 * a + 0.25 * ext[:-2]
    fine[1::2] = 0.75 * a + 0.25 * ext[2:]
    return np.moveaxis(fine, 0, axis)


def upsample(scene: Scene) -> Scene:
    """Next hierarchy level: every resolution doubled, values interpolated.

    The aabb and env half extents are kept; sigma is clamped at zero after
    interpolation since extrapolated borders can dip below it.
    """
    g = scene.grid
    fine_grid = VoxelGrid(tuple(2 * d for d in g.dims), g.aabb_min, g.aabb_max)
    blocks = []
    grid_vals = scene.grid_params.astype(np.float64)
    for axis in range(3):
        grid_vals = _upsample_axis(grid_vals, axis)
    blocks.append(grid_vals.reshape(-1, N_CHANNELS))
    fine_layers = []
    for k, layer in enumerate(scene.layers):
        tex = scene.layer_params(k).astype(np.float64)
        tex = _upsample_axis(_upsample_axis(tex, 1), 2)
        blocks.append(tex.reshape(-1, N_CHANNELS))
        fine_layers.append(EnvLayer(2 * layer.face_res, layer.half_extent))
    values = np.concatenate(blocks, axis=0)
    values[:, SIGMA] = np.maximum(values[:, SIGMA], 0.0)
    return Scene(fine_grid, fine_layers, values.astype(scene.dtype).ravel())


def param_index(scene: Scene, slot: GridSlot | EnvSlot) -> int:
    """Flat parameter index of a grid or env slot."""
    if not 0 <= slot.channel < N_CHANNELS:
        raise ValueError(f"channel {slot.channel} out of range")
    if isinstance(slot, GridSlot):
        X, Y, Z = scene.grid.dims
        if not (0 <= slot.x < X and 0 <= slot.y < Y and 0 <= slot.z < Z):
            raise ValueError(f"grid slot {slot} outside dims {scene.grid.dims}")
        cell = (slot.z * Y + slot.y) * X + slot.x
    elif isinstance(slot, EnvSlot):
        if not 0 <= slot.layer < len(scene.layers):
            raise ValueError(f"env layer {slot.layer} out of range")
        s = scene.layers[slot.layer].face_res
        if not (0 <= slot.face < 6 and 0 <= slot.u < s and 0 <= slot.v < s):
            raise ValueError(f"env slot {slot} outside face resolution {s}")
        cell = int(scene.layer_cell_offsets()[slot.layer]) + (slot.face * s + slot.v) * s + slot.u
    else:
        raise TypeError(f"expected GridSlot or EnvSlot, got {type(slot).__name__}")
    return N_CHANNELS * cell + slot.channel


def param_slot(scene: Scene, index: int) -> GridSlot | EnvSlot:
    """Inverse of :func:`param_index`."""
    index = int(index)
    if not 0 <= index < scene.n_params:
        raise ValueError(f"parameter index {index} outside [0, {scene.n_params})")
    cell, channel = divmod(index, N_CHANNELS)
    X, Y, Z = scene.grid.dims
    if cell < scene.grid.n_cells:
        z, rem = divmod(cell, X * Y)
        y, x = divmod(rem, X)
        return GridSlot(x, y, z, channel)
    offsets = scene.layer_cell_offsets()
    k = int(np.searchsorted(offsets, cell, side="right") - 1)
    s = scene.layers[k].face_res
    face, rem = divmod(cell - int(offsets[k]), s * s)
    v, u = divmod(rem, s)
    return EnvSlot(k, face, u, v, channel)
