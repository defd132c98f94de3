"""Input validation helpers and the package's exception types."""

from __future__ import annotations

import numpy as np


class RejectedInputError(ValueError):
    """Raised when an operation receives structurally invalid input."""


class DataError(Exception):
    """Raised for malformed on-disk data (manifests, rasters, map files)."""


class MapFormatError(DataError):
    pass


class ChecksumError(MapFormatError):
    pass


def check_positive(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise RejectedInputError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_vector3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise RejectedInputError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{name} must be finite")
    return arr


def check_points(points, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise RejectedInputError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


def check_image_pair(depth, labels, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    depth = np.asarray(depth, dtype=np.float64)
    labels = np.asarray(labels)
    if depth.ndim != 2 or labels.ndim != 2:
        raise RejectedInputError("depth and labels must be 2D rasters")
    if depth.shape != labels.shape:
        raise RejectedInputError(
            f"depth {depth.shape} and labels {labels.shape} differ in shape"
        )
    if depth.shape != (height, width):
        raise RejectedInputError(
            f"raster shape {depth.shape} does not match intrinsics ({height}, {width})"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise RejectedInputError("labels must be an integer raster")
    if labels.size and labels.min() < 0:
        raise RejectedInputError("labels must be non-negative class ids")
    return depth, labels.astype(np.int64, copy=False)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise RejectedInputError(f"{what}: shapes {a.shape} and {b.shape} differ")
