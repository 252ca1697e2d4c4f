"""Dataset manifests, PNG images and scene checkpoints.

Checkpoint layout (little-endian)::

    magic      4 bytes   b"PERF"
    version    u32
    dims       3 x u32   (X, Y, Z)
    aabb       6 x f64   (min xyz, max xyz)
    n_layers   u32
    layers     n_layers x (u32 face_res, f64 half_extent)
    payload    n_params x f32, parameter vector in scene layout order
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rays import Camera
from .scene import EnvLayer, N_CHANNELS, Scene, VoxelGrid
from .validation import check_pose

MAGIC = b"PERF"
VERSION = 1
_HEAD = struct.Struct("<4sI3I6dI")
_LAYER = struct.Struct("<Id")


class CheckpointError(ValueError):
    pass


class DatasetError(ValueError):
    pass


# images -------------------------------------------------------------------

def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def read_image(path, background=(1.0, 1.0, 1.0), srgb=True) -> np.ndarray:
    """Decode an 8-bit PNG to float RGB in [0, 1], compositing alpha over ``background``.

    Compositing happens in the stored (sRGB) space, then the result is linearized.
    """
    with Image.open(path) as im:
        im.load()
        mode = im.mode
        arr = np.asarray(im.convert("RGBA" if "A" in mode or mode == "P" else "RGB"),
                         dtype=np.float64) / 255.0
    if arr.shape[-1] == 4:
        bg = np.asarray(background, np.float64)
        bg_stored = linear_to_srgb(bg) if srgb else bg
        rgb = arr[..., :3] * arr[..., 3:] + bg_stored * (1.0 - arr[..., 3:])
    else:
        rgb = arr
    return srgb_to_linear(rgb) if srgb else rgb


def encode_image(image, srgb=True) -> np.ndarray:
    img = np.clip(np.asarray(image, np.float64), 0.0, 1.0)
    if srgb:
        img = linear_to_srgb(img)
    return np.round(img * 255.0).astype(np.uint8)


def write_image(path, image, srgb=True) -> None:
    data = encode_image(image, srgb)
    _atomic_write(path, lambda f: Image.fromarray(data, "RGB").save(f, format="PNG"))


def _atomic_write(path, writer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write(path, lambda f: f.write(text.encode()))


# datasets -----------------------------------------------------------------

@dataclass
class Dataset:
    cameras: list
    images: list
    names: list = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise DatasetError(f"{len(self.cameras)} cameras but {len(self.images)} images")
        shapes = {np.shape(img) for img in self.images}
        if len(shapes) > 1:
            raise DatasetError(f"images in split {self.split!r} differ in size: {sorted(shapes)}")
        if not self.names:
            self.names = [f"{self.split}_{i:03d}" for i in range(len(self.images))]

    def __len__(self):
        return len(self.cameras)

    def subset(self, idx, split=None) -> "Dataset":
        return Dataset([self.cameras[i] for i in idx], [self.images[i] for i in idx],
                       [self.names[i] for i in idx], split or self.split)


def focal_from_fov(camera_angle_x: float, width: int) -> float:
    return 0.5 * width / np.tan(0.5 * camera_angle_x)


def _resolve_image(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix.lower() != ".png" and not p.exists():
        p = p.with_name(p.name + ".png")
    return p


def _shrink(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    H, W = img.shape[:2]
    h, w = H // factor, W // factor
    return img[: h * factor, : w * factor].reshape(h, factor, w, factor, 3).mean(axis=(1, 3))


def load_dataset(root, split="train", background=(1.0, 1.0, 1.0), srgb=True,
                 downscale: int = 1) -> Dataset:
    """Load ``transforms_<split>.json`` (falling back to ``transforms.json``) under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    manifest = root / f"transforms_{split}.json"
    if not manifest.exists():
        manifest = root / "transforms.json"
    if not manifest.exists():
        raise DatasetError(f"no transforms_{split}.json or transforms.json in {root}")
    with open(manifest) as f:
        meta = json.load(f)
    if "camera_angle_x" not in meta or "frames" not in meta:
        raise DatasetError(f"{manifest} lacks camera_angle_x or frames")
    cameras, images, names = [], [], []
    for i, frame in enumerate(meta["frames"]):
        path = _resolve_image(root, frame["file_path"])
        if not path.exists():
            raise DatasetError(f"image for frame {i} not found: {path}")
        try:
            pose = check_pose(np.array(frame["transform_matrix"], dtype=np.float64), tol=1e-3)
        except ValueError as exc:
            raise DatasetError(f"frame {i} ({frame['file_path']}): {exc}") from None
        img = _shrink(read_image(path, background, srgb), downscale)
        H, W = img.shape[:2]
        focal = focal_from_fov(float(meta["camera_angle_x"]), W)
        # renormalize rotation so small export errors pass the strict camera check
        R = pose[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
            u, _, vt = np.linalg.svd(R)
            pose[:3, :3] = u @ vt
        cameras.append(Camera(pose, focal, W, H))
        images.append(img)
        names.append(frame["file_path"])
    return Dataset(cameras, images, names, split)


def write_dataset(root, dataset: Dataset, split=None, srgb=True) -> None:
    """Write images and a transforms manifest readable by :func:`load_dataset`."""
    root = Path(root)
    split = split or dataset.split
    if not dataset.cameras:
        raise DatasetError("cannot write an empty dataset")
    cam0 = dataset.cameras[0]
    frames = []
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        rel = f"./{split}/r_{i}"
        write_image(root / f"{split}/r_{i}.png", img, srgb)
        frames.append({"file_path": rel, "transform_matrix": cam.pose.tolist()})
    angle = 2.0 * np.arctan(0.5 * cam0.width / cam0.focal)
    atomic_write_text(root / f"transforms_{split}.json",
                      json.dumps({"camera_angle_x": float(angle), "frames": frames}, indent=2))


# checkpoints ---------------------------------------------------------------

@dataclass
class CheckpointHeader:
    version: int
    dims: tuple
    aabb_min: tuple
    aabb_max: tuple
    layers: list
    header_bytes: int

    @property
    def n_params(self) -> int:
        X, Y, Z = self.dims
        return N_CHANNELS * (X * Y * Z + sum(6 * s * s for s, _ in self.layers))

    @property
    def payload_bytes(self) -> int:
        return 4 * self.n_params


def _pack_header(scene: Scene) -> bytes:
    g = scene.grid
    out = [_HEAD.pack(MAGIC, VERSION, *g.dims, *g.aabb_min, *g.aabb_max, len(scene.layers))]
    out += [_LAYER.pack(l.face_res, l.half_extent) for l in scene.layers]
    return b"".join(out)


def scene_to_bytes(scene: Scene) -> bytes:
    return _pack_header(scene) + scene.params.astype("<f4").tobytes()


def save_checkpoint(scene: Scene, path) -> None:
    data = scene_to_bytes(scene)
    _atomic_write(path, lambda f: f.write(data))


def _parse_header(buf: bytes, path) -> CheckpointHeader:
    if len(buf) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header ({len(buf)} of {_HEAD.size} bytes)")
    magic, version, X, Y, Z, *rest = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    aabb, n_layers = rest[:6], rest[6]
    need = _HEAD.size + n_layers * _LAYER.size
    if len(buf) < need:
        raise CheckpointError(f"{path}: truncated header ({len(buf)} of {need} bytes)")
    layers = [_LAYER.unpack_from(buf, _HEAD.size + k * _LAYER.size) for k in range(n_layers)]
    return CheckpointHeader(version, (X, Y, Z), tuple(aabb[:3]), tuple(aabb[3:]), layers, need)


def read_checkpoint_header(path) -> CheckpointHeader:
    """Parse the header only; the payload is not read."""
    with open(path, "rb") as f:
        head = f.read(_HEAD.size)
        if len(head) == _HEAD.size and head[:4] == MAGIC:
            n_layers = _HEAD.unpack_from(head)[-1]
            head += f.read(n_layers * _LAYER.size)
    return _parse_header(head, path)


def load_checkpoint(path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    hdr = _parse_header(buf, path)
    expected = hdr.header_bytes + hdr.payload_bytes
    if len(buf) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(buf)}")
    params = np.frombuffer(buf, dtype="<f4", offset=hdr.header_bytes).astype(np.float32)
    grid = VoxelGrid(hdr.dims, hdr.aabb_min, hdr.aabb_max)
    return Scene(grid, [EnvLayer(s, h) for s, h in hdr.layers], params)
