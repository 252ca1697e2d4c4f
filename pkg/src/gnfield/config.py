"""Reconstruction config files (YAML or JSON).

Recognized keys, all optional::

    levels: 5                 # hierarchy levels
    iters_per_level: 30       # Gauss-Newton iterations per level
    base_grid: [32, 32, 32]   # grid dims at level 0, doubled per level
    base_face_res: 32         # env cube-face resolution at level 0
    env_layers: 4             # nested env layers around the grid
    aabb: [[-1.5, -1.5, -1.5], [1.5, 1.5, 1.5]]   # or use center + scale
    center: [0, 0, 0]         # grid box center (with scale)
    scale: 1.5                # grid box half side (with center)
    lambda_aux: 0.1           # weight of the opacity regularizer
    backtrack_alpha: 0.7      # line-search decimation factor
    backtrack_cap: 16         # maximum line-search trials
    pcg:
      eps_scale: 1.0e-10      # stop when |r|^2 < eps_scale * |b|^2
      stall_ratio: 0.85       # stop when |r_k+1|^2 / |r_k|^2 exceeds this
      max_iters: 3
    background: [1, 1, 1]     # color behind the outermost env layer
    srgb: true                # linearize sRGB input (and encode output)
    seed: 0
    deterministic: true       # fixed reduction partition
    threads: 1
    image_pyramid: true       # downscale images by 2 per level below the finest
    jitter: level             # level | iteration | off
    rays_per_iter: null       # random ray subset per iteration (null = all)
    init_opacity: 0.1         # per-cell opacity of the initial grid
    sigma_init: null          # explicit initial grid sigma (overrides init_opacity)
    env_sigma_init: 0.05      # initial sigma of every env texel
    dtype: float32            # parameter storage precision (float32 | float64)
    downscale: 1              # integer image downscale applied at load time
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import yaml

from .solver import GnConfig, PcgConfig

LOAD_KEYS = {"srgb", "downscale"}


def load_config(path=None, **overrides) -> tuple[GnConfig, dict]:
    """Parse a config file into (GnConfig, load options)."""
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a mapping")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> tuple[GnConfig, dict]:
    raw = dict(raw)
    load = {"srgb": bool(raw.pop("srgb", True)), "downscale": int(raw.pop("downscale", 1))}
    center, scale = raw.pop("center", None), raw.pop("scale", None)
    if scale is not None:
        c = center or (0.0, 0.0, 0.0)
        raw["aabb"] = ([v - scale for v in c], [v + scale for v in c])
    if "pcg" in raw:
        raw["pcg"] = PcgConfig(**raw["pcg"])
    known = {f.name for f in fields(GnConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return GnConfig(**raw), load
