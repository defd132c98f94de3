"""Estimator-style front end over the three map backends.

``SemanticMapper.fit`` integrates labeled depth frames into a map,
``predict`` back-projects the map into camera poses, and ``score`` returns
the back-projected mIoU against ground-truth labels. Hyperparameters follow
the scikit-learn convention (stored verbatim, validated in ``fit``), so the
mapper works with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import RejectedInputError, check_positive
from .bki import OsbkiMap, SbkiMap, SparseKernel
from .geometry import CameraIntrinsics, LabeledCloud, Pose, project_frame
from .metrics import ConfusionAccumulator, EvalReport, accumulate, finalize
from .ndt import NdtMap, OccupancyParams, UpdateStats
from .render import MAHA_THRESH, Renderer

BACKENDS = ("sndt", "sbki", "osbki")


def _as_manifest(X):
    from .io import SequenceManifest, load_sequence

    if isinstance(X, SequenceManifest):
        return X
    if isinstance(X, (str, Path)):
        return load_sequence(X)
    return None


def iter_frames(X):
    """Yield ``(depth, labels, pose)`` from a manifest, a path, or an iterable of triples."""
    manifest = _as_manifest(X)
    if manifest is not None:
        for i, entry in enumerate(manifest.frames):
            depth, labels = manifest.load_frame(i)
            yield depth, labels, entry.pose
        return
    for item in X:
        if len(item) != 3:
            raise RejectedInputError("frames must be (depth, labels, pose) triples")
        yield item


class SemanticMapper(BaseEstimator):
    """Semantic 3D mapper with a selectable backend.

    Parameters
    ----------
    backend : {"sndt", "sbki", "osbki"}
    cell_size : float
        Voxel edge length in metres.
    kernel_length : float or None
        BKI kernel support radius in metres; required for the BKI backends
        and rejected for ``sndt``.
    max_range : float
        Depth beyond this Euclidean range is ignored when mapping and rendering.
    top_k : int
        Number of label hypotheses per point fed to the NDT histogram.
    stride : int
        Pixel subsampling step in both image axes while mapping.
    free_spacing, free_margin : float or None
        Free-sample spacing along rays and the gap kept before each endpoint
        (BKI only); default to ``cell_size`` and ``cell_size / 2``.
    """

    def __init__(
        self,
        backend: str = "sndt",
        cell_size: float = 0.1,
        kernel_length: float | None = None,
        max_range: float = 20.0,
        top_k: int = 1,
        stride: int = 1,
        free_spacing: float | None = None,
        free_margin: float | None = None,
        sigma0: float = 1.0,
        alpha0: float = 0.001,
        l_hit: float = 0.85,
        l_miss: float = -0.4,
        l_min: float = -2.0,
        l_max: float = 3.5,
        maha_thresh: float = MAHA_THRESH,
        n_classes: int | None = None,
        void_id: int | None = 0,
    ):
        self.backend = backend
        self.cell_size = cell_size
        self.kernel_length = kernel_length
        self.max_range = max_range
        self.top_k = top_k
        self.stride = stride
        self.free_spacing = free_spacing
        self.free_margin = free_margin
        self.sigma0 = sigma0
        self.alpha0 = alpha0
        self.l_hit = l_hit
        self.l_miss = l_miss
        self.l_min = l_min
        self.l_max = l_max
        self.maha_thresh = maha_thresh
        self.n_classes = n_classes
        self.void_id = void_id

    # -- validation ------------------------------------------------------

    def _validate_params(self) -> None:
        if self.backend not in BACKENDS:
            raise RejectedInputError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        check_positive(self.cell_size, "cell_size")
        check_positive(self.max_range, "max_range")
        if self.backend == "sndt":
            if self.kernel_length is not None:
                raise RejectedInputError("kernel_length does not apply to the sndt backend")
        elif self.kernel_length is None:
            raise RejectedInputError(f"backend {self.backend} requires kernel_length")
        else:
            check_positive(self.kernel_length, "kernel_length")
        if int(self.top_k) != self.top_k or self.top_k < 1:
            raise RejectedInputError("top_k must be a positive integer")
        if int(self.stride) != self.stride or self.stride < 1:
            raise RejectedInputError("stride must be a positive integer")

    def _free_params(self) -> tuple[float, float]:
        spacing = self.cell_size if self.free_spacing is None else self.free_spacing
        margin = self.cell_size / 2 if self.free_margin is None else self.free_margin
        return check_positive(spacing, "free_spacing"), float(margin)

    def new_map(self, n_classes: int):
        self._validate_params()
        if self.backend == "sndt":
            params = OccupancyParams(self.l_hit, self.l_miss, self.l_min, self.l_max)
            return NdtMap(self.cell_size, n_classes, params)
        kernel = SparseKernel(self.kernel_length, self.sigma0)
        cls = SbkiMap if self.backend == "sbki" else OsbkiMap
        return cls(self.cell_size, n_classes, kernel, self.alpha0)

    # -- fitting ---------------------------------------------------------

    def make_cloud(self, depth, labels, pose: Pose, intrinsics: CameraIntrinsics) -> LabeledCloud:
        """Cloud for one frame as this backend consumes it (free samples for BKI)."""
        cloud = project_frame(depth, labels, intrinsics, pose, self.max_range, self.stride)
        if self.backend != "sndt":
            cloud = cloud.with_free_samples(*self._free_params())
        return cloud

    def _prepare(self, X, intrinsics):
        manifest = _as_manifest(X)
        if manifest is not None:
            intrinsics = manifest.intrinsics
            n_classes = self.n_classes or manifest.n_classes
            self.void_id_ = manifest.void_id
            self.class_names_ = dict(manifest.classes)
        else:
            n_classes = self.n_classes
        if intrinsics is None:
            raise RejectedInputError("intrinsics are required when fitting from raw frames")
        return manifest if manifest is not None else X, intrinsics, n_classes

    def fit(self, X, y=None, intrinsics: CameraIntrinsics | None = None):
        """Build a fresh map from all frames of ``X``."""
        self._validate_params()
        for attr in ("map_", "stats_", "void_id_", "class_names_"):
            self.__dict__.pop(attr, None)
        self.void_id_ = self.void_id
        self.class_names_ = {}
        frames, intrinsics, n_classes = self._prepare(X, intrinsics)
        if n_classes is None:
            frames = list(iter_frames(frames))
            n_classes = int(max(int(np.max(lab)) for _, lab, _ in frames)) + 1 if frames else 1
        self.map_ = self.new_map(n_classes)
        self.intrinsics_ = intrinsics
        self.n_classes_ = n_classes
        self.stats_ = []
        return self._integrate(frames)

    def partial_fit(self, X, y=None, intrinsics: CameraIntrinsics | None = None):
        """Integrate more frames into the existing map (fits first if needed)."""
        if not hasattr(self, "map_"):
            return self.fit(X, y, intrinsics)
        frames, intrinsics, _ = self._prepare(X, intrinsics or self.intrinsics_)
        self.intrinsics_ = intrinsics
        return self._integrate(frames)

    def _integrate(self, frames):
        for depth, labels, pose in iter_frames(frames):
            t0 = time.perf_counter()
            cloud = self.make_cloud(depth, labels, pose, self.intrinsics_)
            st: UpdateStats = self.map_.integrate_cloud(cloud, self.top_k)
            st.wall_time = time.perf_counter() - t0
            self.stats_.append(st)
        return self

    def integrate(self, cloud: LabeledCloud) -> UpdateStats:
        self._check_fitted()
        return self.map_.integrate_cloud(cloud, self.top_k)

    # -- inference -------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "map_"):
            raise NotFittedError("SemanticMapper is not fitted yet; call fit first")

    def renderer(self) -> Renderer:
        self._check_fitted()
        ignore = () if self.void_id_ is None else (self.void_id_,)
        return Renderer(self.map_, ignore, self.maha_thresh)

    def predict(self, X, intrinsics: CameraIntrinsics | None = None) -> np.ndarray:
        """Back-projected label images, shape (n_poses, H, W).

        ``X`` is a pose, a list of poses, or a sequence (its poses are used).
        Pixels without a class are -2 (free) or -1 (unknown).
        """
        self._check_fitted()
        manifest = _as_manifest(X)
        if manifest is not None:
            poses = [f.pose for f in manifest.frames]
            intrinsics = intrinsics or manifest.intrinsics
        else:
            poses = [X] if isinstance(X, Pose) else list(X)
        intrinsics = intrinsics or self.intrinsics_
        r = self.renderer()
        out = np.empty((len(poses), intrinsics.height, intrinsics.width), np.int64)
        for i, pose in enumerate(poses):
            out[i] = r.render(pose, intrinsics, self.max_range).labels
        return out

    def evaluate(self, X, gt_present_classes=None) -> EvalReport:
        """Back-project at every pose of ``X`` and score against its labels."""
        self._check_fitted()
        manifest = _as_manifest(X)
        intr = manifest.intrinsics if manifest is not None else self.intrinsics_
        names = manifest.classes if manifest is not None else self.class_names_
        return evaluate_map(
            self.map_, iter_frames(X), intr, self.void_id_, self.max_range,
            self.maha_thresh, gt_present_classes, names,
        )

    def score(self, X, y=None) -> float:
        return self.evaluate(X).miou


def evaluate_map(
    smap, frames, intrinsics: CameraIntrinsics, void_id: int | None = 0,
    max_range: float = 20.0, maha_thresh: float = MAHA_THRESH,
    gt_present_classes=None, class_names=None,
) -> EvalReport:
    """Render ``smap`` at each frame pose and accumulate metrics against its labels."""
    ignore = () if void_id is None else (void_id,)
    r = Renderer(smap, ignore, maha_thresh)
    acc = ConfusionAccumulator(smap.n_classes)
    for _, labels, pose in frames:
        accumulate(acc, r.render(pose, intrinsics, max_range), labels, void_id)
    return finalize(acc, gt_present_classes, class_names)
