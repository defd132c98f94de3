"""Semantic occupancy NDT map.

Each voxel carries occupancy log-odds, running Gaussian statistics of the
points that fell into it, and a class histogram. Means are stored relative
to the voxel's lower corner to keep magnitudes bounded far from the origin;
the public accessors return world coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._validation import RejectedInputError, check_positive
from .geometry import FREE_LABEL, LabeledCloud, LabeledPoint, cell_keys, traverse_rays
from .grid import SparseGrid, pack_keys, unpack_keys

OCCUPIED = "occupied"
FREE = "free"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class OccupancyParams:
    l_hit: float = 0.85
    l_miss: float = -0.4
    l_min: float = -2.0
    l_max: float = 3.5
    occ_thresh: float = 0.0
    free_thresh: float = 0.0
    n_min_gauss: int = 3
    eps_reg: float = 1e-6

    def __post_init__(self):
        if not self.l_min <= 0 <= self.l_max:
            raise RejectedInputError("clamp range must contain 0")
        if self.free_thresh > self.occ_thresh:
            raise RejectedInputError("free_thresh must not exceed occ_thresh")


@dataclass
class NdtCell:
    log_odds: float = 0.0
    n: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m2: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    histogram: dict[int, float] = field(default_factory=dict)

    @property
    def covariance(self) -> np.ndarray | None:
        return self.m2 / self.n if self.n >= 2 else None


@dataclass
class UpdateStats:
    wall_time: float = 0.0
    n_points: int = 0
    n_endpoints: int = 0
    n_free_samples: int = 0
    n_hit_cells: int = 0
    n_miss_cells: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class NdtMap:
    backend = "sndt"

    def __init__(self, cell_size: float, n_classes: int, params: OccupancyParams | None = None):
        self.cell_size = check_positive(cell_size, "cell_size")
        if not 1 <= int(n_classes) <= FREE_LABEL:
            raise RejectedInputError(f"n_classes must be in [1, {FREE_LABEL}]")
        self.n_classes = int(n_classes)
        self.params = params or OccupancyParams()
        self.grid = SparseGrid(
            self.cell_size,
            {
                "log_odds": ((), np.float64, 0.0),
                "n": ((), np.int64, 0),
                "mean": ((3,), np.float64, 0.0),
                "m2": ((3, 3), np.float64, 0.0),
                "hist": ((self.n_classes,), np.float64, 0.0),
            },
        )

    def __len__(self) -> int:
        return len(self.grid)

    def cell(self, key) -> NdtCell:
        """Snapshot of one voxel; absent keys give the empty unknown cell."""
        r = self.grid.row(key)
        if r < 0:
            return NdtCell()
        g = self.grid
        hist = g.field("hist")[r]
        corner = np.asarray(key, dtype=np.float64) * self.cell_size
        n = int(g.field("n")[r])
        return NdtCell(
            log_odds=float(g.field("log_odds")[r]),
            n=n,
            mean=g.field("mean")[r] + corner if n else np.zeros(3),
            m2=g.field("m2")[r].copy(),
            histogram={int(c): float(hist[c]) for c in np.flatnonzero(hist)},
        )

    def _local(self, points: np.ndarray, keys: np.ndarray) -> np.ndarray:
        return points - keys * self.cell_size

    def _check_labels(self, labels: np.ndarray) -> None:
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise RejectedInputError(
                f"class ids must be in [0, {self.n_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )

    def _insert(self, points: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
        keys = cell_keys(points, self.cell_size)
        rows = self.grid.rows(keys, create=True)
        g = self.grid
        p = self.params
        _kernels.ndt_insert(
            rows, self._local(points, keys), g.field("log_odds"), g.field("n"),
            g.field("mean"), g.field("m2"), p.l_hit, p.l_min, p.l_max,
        )
        hist = g.field("hist")
        np.add.at(hist, (np.repeat(rows, labels.shape[1]), labels.ravel()), weights.ravel())
        return rows

    def insert_point(self, point: LabeledPoint, top_k_labels=None) -> NdtMap:
        """Add one surface point: Welford update, histogram votes, log-odds hit."""
        if point.is_free_sample or point.label == FREE_LABEL:
            raise RejectedInputError("free samples cannot be inserted into an NDT map")
        if top_k_labels is None:
            top_k_labels = [(point.label, 1.0)]
        labels = np.array([[c for c, _ in top_k_labels]], dtype=np.int64)
        weights = np.array([[w for _, w in top_k_labels]], dtype=np.float64)
        self._check_labels(labels)
        pos = np.asarray(point.position, dtype=np.float64).reshape(1, 3)
        self._insert(pos, labels, weights)
        return self

    def insert_points(self, points, labels) -> NdtMap:
        """Batch of surface points with one label each; no ray (miss) updates."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
        if labels.shape[0] != points.shape[0]:
            raise RejectedInputError("one label per point required")
        self._check_labels(labels)
        if len(points):
            self._insert(points, labels, np.ones(labels.shape))
        return self

    def integrate_cloud(self, cloud: LabeledCloud, top_k: int = 1) -> UpdateStats:
        """Insert every endpoint and apply one miss update per traversed cell.

        Free samples in the cloud are ignored; free space comes from the
        rays. Cells hit by this cloud are exempt from its miss updates.
        """
        if int(top_k) != top_k or top_k < 1:
            raise RejectedInputError("top_k must be a positive integer")
        t0 = time.perf_counter()
        ends = cloud.endpoints
        labels, weights = cloud.endpoint_labels(int(top_k))
        self._check_labels(labels)
        stats = UpdateStats(
            n_points=len(cloud), n_endpoints=len(ends), n_free_samples=int(cloud.free.sum())
        )
        if len(ends):
            offsets, keys = traverse_rays(cloud.origin[None, :], ends, self.cell_size)
            last = offsets[1:] - 1
            is_end = np.zeros(len(keys), bool)
            is_end[last] = True
            hit_codes = np.unique(pack_keys(keys[is_end]))
            pass_codes = np.unique(pack_keys(keys[~is_end]))
            miss_codes = np.setdiff1d(pass_codes, hit_codes, assume_unique=True)
            if miss_codes.size:
                rows = self.grid.rows(unpack_keys(miss_codes), create=True)
                lo = self.grid.field("log_odds")
                p = self.params
                lo[rows] = np.clip(lo[rows] + p.l_miss, p.l_min, p.l_max)
            stats.n_miss_cells = int(miss_codes.size)
            stats.n_hit_cells = int(hit_codes.size)
            self._insert(ends, labels, weights)
        stats.wall_time = time.perf_counter() - t0
        return stats

    # -- read side -----------------------------------------------------

    def occupancy_state(self) -> np.ndarray:
        """Per-row state code: 1 occupied, -1 free, 0 unknown."""
        lo = self.grid.field("log_odds")
        p = self.params
        return np.where(lo > p.occ_thresh, 1, np.where(lo < p.free_thresh, -1, 0)).astype(np.int8)

    def row_classes(self, ignore=()) -> np.ndarray:
        """Argmax class per row (lowest id on ties), -1 when no eligible mass."""
        hist = self.grid.field("hist")
        if ignore:
            hist = hist.copy()
            hist[:, [c for c in ignore if 0 <= c < self.n_classes]] = 0.0
        cls = np.argmax(hist, axis=1)
        cls[hist.max(axis=1, initial=0.0) <= 0.0] = -1
        return cls.astype(np.int64)

    def row_gaussians(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World means, regularized inverse covariances and a validity mask per row."""
        g = self.grid
        n = g.field("n")
        ok = n >= self.params.n_min_gauss
        means = g.field("mean") + g.keys() * self.cell_size
        inv = np.zeros((len(g), 3, 3))
        if ok.any():
            cov = g.field("m2")[ok] / n[ok, None, None]
            w, v = np.linalg.eigh(cov)
            w = np.maximum(w, self.params.eps_reg)
            inv[ok] = (v / w[:, None, :]) @ np.swapaxes(v, 1, 2)
        return means, inv, ok

    def total_histogram_mass(self) -> float:
        return float(self.grid.field("hist").sum())


def classify_cell(cell: NdtCell, params: OccupancyParams | None = None, ignore=()):
    """(class id or None, occupancy state) for one voxel."""
    p = params or OccupancyParams()
    if cell.log_odds > p.occ_thresh:
        state = OCCUPIED
    elif cell.log_odds < p.free_thresh:
        state = FREE
    else:
        state = UNKNOWN
    best = None
    best_mass = 0.0
    for c in sorted(cell.histogram):
        if c == FREE_LABEL or c in ignore:
            continue
        if cell.histogram[c] > best_mass:
            best, best_mass = c, cell.histogram[c]
    return best, state


def cell_gaussian(cell: NdtCell, params: OccupancyParams | None = None):
    """(mean, covariance) with eigenvalues floored at eps_reg, or None below n_min."""
    p = params or OccupancyParams()
    if cell.n < p.n_min_gauss:
        return None
    cov = cell.m2 / cell.n
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w, p.eps_reg)
    cov = (v * w) @ v.T
    return cell.mean.copy(), 0.5 * (cov + cov.T)


def surface_fit_errors(m: NdtMap, points) -> tuple[float, float]:
    """RMS error of ``points`` against each cell's plane and against its mean alone.

    The plane passes through the cell mean with the covariance's weakest
    eigenvector as normal; the centroid-only model represents the surface
    by the mean point. Points in cells below ``n_min_gauss`` are skipped.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rows = m.grid.rows(cell_keys(points, m.cell_size), create=False)
    n = m.grid.field("n")
    ok = rows >= 0
    ok[ok] = n[rows[ok]] >= m.params.n_min_gauss
    if not ok.any():
        raise RejectedInputError("no point falls into a cell with a Gaussian")
    rows, pts = rows[ok], points[ok]
    means, _, _ = m.row_gaussians()
    cov = m.grid.field("m2")[rows] / n[rows, None, None]
    normals = np.linalg.eigh(cov)[1][:, :, 0]
    d = pts - means[rows]
    plane = np.einsum("ij,ij->i", d, normals)
    return float(np.sqrt(np.mean(plane**2))), float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
