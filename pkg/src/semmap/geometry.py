"""Camera and pose math, depth back-projection, ray traversal and free-space sampling.

Conventions: camera frame is x right, y down, z forward; depth rasters hold
metric depth along the optical axis; a pose maps camera coordinates into the
world (``x_world = R @ x_cam + t``). Voxel keys use the floor convention, so
each cell is the half-open box ``[key * c, (key + 1) * c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._validation import (
    RejectedInputError,
    check_image_pair,
    check_points,
    check_positive,
    check_vector3,
)

#: Reserved class id carried by free-space samples.
FREE_LABEL = 255

_SPACING_RTOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise RejectedInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise RejectedInputError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise RejectedInputError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> CameraIntrinsics:
        f = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def pixel_grid(self, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of the sampled pixels, row-major."""
        v, u = np.mgrid[0 : self.height : stride, 0 : self.width : stride]
        return v.ravel(), u.ravel()

    def camera_rays(self, stride: int = 1) -> np.ndarray:
        """Unnormalized rays ``((u - cx) / fx, (v - cy) / fy, 1)`` for sampled pixels."""
        v, u = self.pixel_grid(stride)
        rays = np.empty((v.size, 3))
        rays[:, 0] = (u - self.cx) / self.fx
        rays[:, 1] = (v - self.cy) / self.fy
        rays[:, 2] = 1.0
        return rays

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform world <- camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = check_vector3(self.translation, "translation")
        if R.shape != (3, 3):
            raise RejectedInputError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9):
            raise RejectedInputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise RejectedInputError("rotation must have determinant +1")
        R.setflags(write=False)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (12,):
            m = m.reshape(3, 4)
        if m.shape not in ((3, 4), (4, 4)):
            raise RejectedInputError(f"pose matrix must be 3x4 or 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
        """Camera at ``eye`` with its optical axis through ``target``."""
        eye = check_vector3(eye, "eye")
        z = check_vector3(target, "target") - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-12:
            raise RejectedInputError("up vector is parallel to the viewing direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), eye)

    def as_matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


class CellKey(NamedTuple):
    i: int
    j: int
    k: int


def cell_key(position, cell_size: float) -> CellKey:
    p = check_vector3(position, "position")
    i, j, k = np.floor(p / cell_size).astype(np.int64)
    return CellKey(int(i), int(j), int(k))


def cell_keys(points: np.ndarray, cell_size: float) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=np.float64) / cell_size).astype(np.int64)


@dataclass(frozen=True)
class LabeledPoint:
    position: np.ndarray
    label: int
    is_free_sample: bool = False

    def __post_init__(self):
        if self.is_free_sample != (self.label == FREE_LABEL):
            raise RejectedInputError("is_free_sample must coincide with label == FREE_LABEL")


@dataclass
class LabeledCloud:
    """Labeled points observed from one sensor origin.

    Stored column-wise. ``topk_labels``/``topk_weights`` optionally carry
    several weighted class hypotheses per point; without them each point
    votes for ``labels`` with weight 1.
    """

    origin: np.ndarray
    positions: np.ndarray
    labels: np.ndarray
    topk_labels: np.ndarray | None = None
    topk_weights: np.ndarray | None = None
    n_nonfinite: int = 0
    n_out_of_range: int = 0
    n_examined: int = 0
    free: np.ndarray = field(init=False)

    def __post_init__(self):
        self.origin = check_vector3(self.origin, "origin")
        self.positions = check_points(self.positions, "positions")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.positions.shape[0]:
            raise RejectedInputError("one label per point required")
        self.free = self.labels == FREE_LABEL
        if self.topk_labels is not None:
            self.topk_labels = np.asarray(self.topk_labels, dtype=np.int64)
            self.topk_weights = np.asarray(self.topk_weights, dtype=np.float64)
            if self.topk_labels.shape != self.topk_weights.shape or (
                self.topk_labels.shape[0] != self.positions.shape[0]
            ):
                raise RejectedInputError("top-k labels and weights must be (N, K)")

    @classmethod
    def from_points(cls, origin, points: list[LabeledPoint]) -> LabeledCloud:
        pos = np.array([p.position for p in points], dtype=np.float64).reshape(-1, 3)
        return cls(origin, pos, np.array([p.label for p in points], dtype=np.int64))

    @property
    def points(self) -> list[LabeledPoint]:
        return [
            LabeledPoint(p, int(lab), bool(f))
            for p, lab, f in zip(self.positions, self.labels, self.free)
        ]

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def endpoints(self) -> np.ndarray:
        return self.positions[~self.free]

    def endpoint_labels(self, top_k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """(N, top_k) class ids and weights of the non-free points."""
        keep = ~self.free
        if self.topk_labels is None:
            labs = self.labels[keep][:, None]
            return labs, np.ones(labs.shape)
        return self.topk_labels[keep, :top_k], self.topk_weights[keep, :top_k]

    def with_free_samples(self, spacing: float, endpoint_margin: float) -> LabeledCloud:
        """Copy of the cloud with free samples appended along every endpoint ray."""
        ends = self.endpoints
        free_pos = sample_free_points_batch(self.origin, ends, spacing, endpoint_margin)
        pos = np.vstack([self.positions, free_pos])
        labels = np.concatenate([self.labels, np.full(len(free_pos), FREE_LABEL)])
        topk_l = topk_w = None
        if self.topk_labels is not None:
            k = self.topk_labels.shape[1]
            topk_l = np.vstack([self.topk_labels, np.full((len(free_pos), k), FREE_LABEL)])
            topk_w = np.vstack([self.topk_weights, np.zeros((len(free_pos), k))])
        return LabeledCloud(
            self.origin, pos, labels, topk_l, topk_w,
            self.n_nonfinite, self.n_out_of_range, self.n_examined,
        )


def project_frame(
    depth,
    labels,
    intr: CameraIntrinsics,
    pose: Pose,
    max_range: float = 20.0,
    stride: int = 1,
) -> LabeledCloud:
    """Back-project a depth + label frame into a world-frame labeled cloud.

    Pixels with zero or non-finite depth, or whose Euclidean range exceeds
    ``max_range``, are dropped; the cloud records how many of each.
    """
    depth, labels = check_image_pair(depth, labels, intr.width, intr.height)
    max_range = check_positive(max_range, "max_range")
    if int(stride) != stride or stride < 1:
        raise RejectedInputError("stride must be a positive integer")
    stride = int(stride)
    v, u = intr.pixel_grid(stride)
    z = depth[v, u]
    lab = labels[v, u]
    rays = intr.camera_rays(stride)
    finite = np.isfinite(z)
    rng = np.where(finite, z, 0.0) * np.linalg.norm(rays, axis=1)
    valid = finite & (z > 0) & (rng <= max_range)
    pts = pose.apply(rays[valid] * z[valid, None])
    return LabeledCloud(
        pose.translation,
        pts,
        lab[valid],
        n_nonfinite=int((~finite).sum()),
        n_out_of_range=int((finite & (z > 0) & (rng > max_range)).sum()),
        n_examined=int(z.size),
    )


def _free_counts(lengths: np.ndarray, spacing: float, endpoint_margin: float) -> np.ndarray:
    # number of m >= 1 with m * spacing < length - margin; near-equality excludes
    q = (lengths - endpoint_margin) / spacing
    r = np.round(q)
    on_boundary = np.abs(q - r) <= _SPACING_RTOL * np.maximum(1.0, np.abs(q))
    n = np.where(on_boundary, r - 1, np.floor(q))
    return np.maximum(n, 0).astype(np.int64)


def sample_free_points(origin, endpoint, spacing: float, endpoint_margin: float) -> list[LabeledPoint]:
    """Free samples every ``spacing`` metres from ``origin`` toward ``endpoint``.

    Samples stop strictly short of ``|endpoint - origin| - endpoint_margin``.
    """
    origin = check_vector3(origin, "origin")
    endpoint = check_vector3(endpoint, "endpoint")
    pts = sample_free_points_batch(origin, endpoint[None, :], spacing, endpoint_margin)
    return [LabeledPoint(p, FREE_LABEL, True) for p in pts]


def sample_free_points_batch(origin, endpoints, spacing: float, endpoint_margin: float) -> np.ndarray:
    """Vectorized :func:`sample_free_points` over many rays sharing one origin."""
    spacing = check_positive(spacing, "spacing")
    if endpoint_margin < 0:
        raise RejectedInputError("endpoint_margin must be non-negative")
    origin = np.asarray(origin, dtype=np.float64)
    endpoints = check_points(endpoints, "endpoints")
    delta = endpoints - origin
    lengths = np.linalg.norm(delta, axis=1)
    ok = lengths > 0
    counts = np.zeros(len(endpoints), np.int64)
    counts[ok] = _free_counts(lengths[ok], spacing, endpoint_margin)
    total = int(counts.sum())
    if total == 0:
        return np.empty((0, 3))
    ray = np.repeat(np.arange(len(endpoints)), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    m = np.arange(total) - first + 1
    unit = delta[ray] / lengths[ray, None]
    return origin + unit * (m * spacing)[:, None]


def traverse_rays(origins, endpoints, cell_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Cells crossed by many segments.

    Returns ``(offsets, keys)``: keys of segment ``r`` are
    ``keys[offsets[r]:offsets[r + 1]]``, ordered from origin to endpoint.
    """
    cell_size = check_positive(cell_size, "cell_size")
    origins = check_points(origins, "origins")
    endpoints = check_points(endpoints, "endpoints")
    if origins.shape[0] == 1 and endpoints.shape[0] > 1:
        origins = np.broadcast_to(origins, endpoints.shape)
    if origins.shape != endpoints.shape:
        raise RejectedInputError("origins and endpoints must pair up")
    origins = np.ascontiguousarray(origins)
    endpoints = np.ascontiguousarray(endpoints)
    k0 = cell_keys(origins, cell_size)
    k1 = cell_keys(endpoints, cell_size)
    counts = 1 + np.abs(k1 - k0).sum(axis=1)
    offsets = np.zeros(len(counts) + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    keys = np.empty((int(offsets[-1]), 3), np.int64)
    if len(counts):
        _kernels.traverse_fill(origins, endpoints, cell_size, offsets, keys)
    return offsets, keys


def traverse_ray(origin, endpoint, cell_size: float) -> list[CellKey]:
    """Ordered cells intersected by the segment ``origin -> endpoint``.

    Consecutive keys differ by one step along one axis; the first key
    contains ``origin`` and the last contains ``endpoint``.
    """
    o = check_vector3(origin, "origin")
    e = check_vector3(endpoint, "endpoint")
    _, keys = traverse_rays(o[None, :], e[None, :], cell_size)
    return [CellKey(*map(int, k)) for k in keys]
