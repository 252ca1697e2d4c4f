"""Input validation helpers shared by the estimator, io and CLI layers."""
import numpy as np


def check_positive_int(value, name):
    if int(value) != value or int(value) <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_pose(pose, tol=1e-5):
    """Return ``pose`` as a float64 4x4 rigid transform or raise ValueError."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise ValueError(f"pose must be 4x4, got shape {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ValueError("pose contains non-finite values")
    rot = pose[:3, :3]
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"pose rotation is not orthonormal (max deviation {err:.2e} > {tol:g})")
    if not np.allclose(pose[3], [0, 0, 0, 1], atol=tol):
        raise ValueError(f"pose bottom row must be [0, 0, 0, 1], got {pose[3]}")
    return pose


def check_image(image, name="image"):
    """Float (H, W, 3) image with finite values."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError(f"{name} contains non-finite values")
    return image


def check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def check_color(color, name="background"):
    color = np.asarray(color, dtype=np.float64).reshape(-1)
    if color.shape != (3,) or not np.all(np.isfinite(color)):
        raise ValueError(f"{name} must be three finite values, got {color}")
    return color
