"""Back-projection of a semantic map into a camera image by ray casting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._validation import RejectedInputError, check_positive
from .bki import OsbkiMap, SbkiMap
from .geometry import CameraIntrinsics, Pose
from .ndt import NdtMap

#: Ray ended without a surface after crossing free space.
INVALID_FREE = -2
#: Ray ended without any decision (unobserved space, or a surface without a class).
UNKNOWN = -1

MAHA_THRESH = 3.0


@dataclass
class RenderedFrame:
    labels: np.ndarray
    depth_hit: np.ndarray

    @property
    def invalid_mask(self) -> np.ndarray:
        return self.labels < 0

    def to_indexed(self, free_index: int = 255, unknown_index: int = 254) -> np.ndarray:
        """8-bit raster with the two invalid outcomes mapped to reserved indices."""
        out = np.where(
            self.labels == INVALID_FREE, free_index,
            np.where(self.labels == UNKNOWN, unknown_index, self.labels),
        )
        if out.max(initial=0) > 255:
            raise RejectedInputError("class ids above 255 cannot be stored as 8-bit indices")
        return out.astype(np.uint8)


class Renderer:
    """Precomputed per-voxel decisions for repeated back-projection of one map.

    ``ignore`` lists class ids that never win the per-voxel argmax (the void
    class at evaluation time).
    """

    def __init__(self, smap, ignore=(), maha_thresh: float = MAHA_THRESH):
        if not isinstance(smap, (NdtMap, SbkiMap, OsbkiMap)):
            raise RejectedInputError(f"unsupported map type {type(smap).__name__}")
        self.map = smap
        self.cell_size = smap.cell_size
        self.maha_thresh = check_positive(maha_thresh, "maha_thresh")
        n = len(smap.grid)
        if isinstance(smap, NdtMap):
            self.state = smap.occupancy_state()
            self.label = smap.row_classes(ignore)
            self.use_gauss = True
            self.means, self.inv, self.gauss_ok = smap.row_gaussians()
        else:
            self.state, self.label = smap.row_decisions(ignore)
            self.use_gauss = False
            self.means = np.zeros((n, 3))
            self.inv = np.zeros((n, 3, 3))
            self.gauss_ok = np.zeros(n, bool)
        self.vol, self.vol_base = smap.grid.dense_rows()
        if n == 0:
            self.state = np.zeros(1, np.int8)
            self.label = np.full(1, -1, np.int64)

    def render(self, pose: Pose, intr: CameraIntrinsics, max_range: float = 20.0) -> RenderedFrame:
        max_range = check_positive(max_range, "max_range")
        rays = intr.camera_rays()
        dirs = pose.apply(rays) - pose.translation
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        label, depth, saw_free, hit = _kernels.render_first_hit(
            np.ascontiguousarray(pose.translation), np.ascontiguousarray(dirs),
            np.full(len(dirs), max_range), self.vol, self.vol_base, self.cell_size,
            self.state, self.label, self.use_gauss, self.gauss_ok,
            np.ascontiguousarray(self.means), np.ascontiguousarray(self.inv), self.maha_thresh,
        )
        out = np.where(hit, np.where(label >= 0, label, UNKNOWN), np.where(saw_free, INVALID_FREE, UNKNOWN))
        shape = (intr.height, intr.width)
        return RenderedFrame(out.reshape(shape), np.where(hit, depth, 0.0).reshape(shape))


def backproject(smap, pose: Pose, intr: CameraIntrinsics, max_range: float = 20.0, ignore=(), maha_thresh: float = MAHA_THRESH) -> RenderedFrame:
    """Render the map's semantic surface as seen from ``pose``."""
    return Renderer(smap, ignore, maha_thresh).render(pose, intr, max_range)
