"""Bayesian kernel inference maps: joint S-BKI and the two-step OS-BKI.

Both backends spread each observation's mass onto every voxel whose centre
lies strictly within the kernel length of it. S-BKI keeps one concentration
vector over ``free + n`` classes. OS-BKI first infers binary occupancy from
all observations, then infers semantics from the non-free ones only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._validation import RejectedInputError, check_positive
from .geometry import FREE_LABEL, LabeledCloud, cell_keys
from .grid import SparseGrid
from .ndt import UpdateStats

#: Returned by :func:`classify_sbki` when the free class wins.
FREE = -2
#: Returned for voxels that carry no evidence beyond the prior.
UNKNOWN = -1


@dataclass(frozen=True)
class SparseKernel:
    length_l: float
    sigma0: float = 1.0

    def __post_init__(self):
        check_positive(self.length_l, "kernel length")
        check_positive(self.sigma0, "sigma0")

    def __call__(self, d):
        return kernel_eval(self, d)


def kernel_eval(kernel: SparseKernel, d):
    """Compact-support kernel mass at distance ``d`` (scalar or array)."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise RejectedInputError("distance must be non-negative")
    x = np.minimum(d / kernel.length_l, 1.0)
    tp = 2.0 * np.pi * x
    k = kernel.sigma0 * ((2.0 + np.cos(tp)) / 3.0 * (1.0 - x) + np.sin(tp) / (2.0 * np.pi))
    k = np.where(d >= kernel.length_l, 0.0, np.maximum(k, 0.0))
    return float(k) if k.ndim == 0 else k


class _BkiMap:
    backend = ""
    _n_extra = 0

    def __init__(self, cell_size: float, n_classes: int, kernel: SparseKernel, alpha0: float = 0.001):
        self.cell_size = check_positive(cell_size, "cell_size")
        if not 1 <= int(n_classes) <= FREE_LABEL:
            raise RejectedInputError(f"n_classes must be in [1, {FREE_LABEL}]")
        if not isinstance(kernel, SparseKernel):
            kernel = SparseKernel(float(kernel))
        self.n_classes = int(n_classes)
        self.kernel = kernel
        self.alpha0 = check_positive(alpha0, "alpha0")
        self.grid = SparseGrid(
            self.cell_size,
            {"alpha": ((self.n_columns,), np.float64, self.alpha0)},
        )

    @property
    def n_columns(self) -> int:
        return self._n_extra + self.n_classes

    def __len__(self) -> int:
        return len(self.grid)

    @property
    def alpha(self) -> np.ndarray:
        return self.grid.field("alpha")

    def _columns(self, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def integrate_cloud(self, cloud: LabeledCloud, top_k: int = 1) -> UpdateStats:
        """Accumulate kernel mass of every point (free samples included)."""
        t0 = time.perf_counter()
        labels = cloud.labels
        sem = ~cloud.free
        if sem.any() and (labels[sem].min() < 0 or labels[sem].max() >= self.n_classes):
            raise RejectedInputError(f"class ids must be in [0, {self.n_classes})")
        stats = UpdateStats(
            n_points=len(cloud), n_endpoints=int(sem.sum()), n_free_samples=int(cloud.free.sum())
        )
        if len(cloud):
            col_a, col_b = self._columns(labels)
            self._accumulate(cloud.positions, col_a, col_b)
        stats.wall_time = time.perf_counter() - t0
        return stats

    def _accumulate(self, points: np.ndarray, col_a: np.ndarray, col_b: np.ndarray) -> None:
        c = self.cell_size
        radius = int(math.ceil(self.kernel.length_l / c))
        keys = cell_keys(points, c)
        base = keys.min(axis=0) - radius
        dims = keys.max(axis=0) + radius - base + 1
        acc = np.zeros((*dims, self.n_columns))
        touched = np.zeros(tuple(dims), np.uint8)
        # cell order keeps neighbouring scatters in cache
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        _kernels.bki_accumulate(
            np.ascontiguousarray(points[order]), col_a[order], col_b[order], base, c,
            self.kernel.length_l, self.kernel.sigma0, radius, acc, touched, _kernels.KERNEL_POLY,
        )
        local = np.argwhere(touched)
        rows = self.grid.rows(local + base, create=True)
        self.grid.field("alpha")[rows] += acc[local[:, 0], local[:, 1], local[:, 2]]

    def voxel(self, key) -> np.ndarray:
        """Concentration vector of one voxel (the prior for absent keys)."""
        r = self.grid.row(key)
        if r < 0:
            return np.full(self.n_columns, self.alpha0)
        return self.alpha[r].copy()


class SbkiMap(_BkiMap):
    """Joint inference over ``[FREE, class 0, ..., class n-1]``."""

    backend = "sbki"
    _n_extra = 1

    def _columns(self, labels):
        col_a = np.where(labels == FREE_LABEL, 0, labels + 1).astype(np.int64)
        return col_a, np.full(labels.shape, -1, np.int64)

    def row_decisions(self, ignore=()) -> tuple[np.ndarray, np.ndarray]:
        """Per-row (state, class): state 1 occupied, -1 free, 0 unknown."""
        cls = _sbki_argmax(self.alpha, self.alpha0, ignore)
        state = np.where(cls >= 0, 1, np.where(cls == FREE, -1, 0)).astype(np.int8)
        return state, cls


class OsbkiMap(_BkiMap):
    """Two-step inference: ``[free, occupied]`` then semantics-only classes."""

    backend = "osbki"
    _n_extra = 2

    def _columns(self, labels):
        free = labels == FREE_LABEL
        col_a = np.where(free, 0, 1).astype(np.int64)
        col_b = np.where(free, -1, labels + 2).astype(np.int64)
        return col_a, col_b

    @property
    def alpha_free(self) -> np.ndarray:
        return self.alpha[:, 0]

    @property
    def alpha_occ(self) -> np.ndarray:
        return self.alpha[:, 1]

    @property
    def alpha_sem(self) -> np.ndarray:
        return self.alpha[:, 2:]

    def row_decisions(self, ignore=()) -> tuple[np.ndarray, np.ndarray]:
        a = self.alpha
        state = _osbki_state(a[:, 0], a[:, 1], self.alpha0)
        cls = _sem_argmax(a[:, 2:], self.alpha0, ignore)
        return state, np.where(state > 0, cls, UNKNOWN)


def _sem_argmax(sem: np.ndarray, alpha0: float, ignore=()) -> np.ndarray:
    sem = sem.copy()
    bad = [c for c in ignore if 0 <= c < sem.shape[1]]
    at_prior = np.all(sem == alpha0, axis=1)
    sem[:, bad] = -np.inf
    cls = np.argmax(sem, axis=1).astype(np.int64) if sem.shape[0] else np.empty(0, np.int64)
    cls[at_prior] = UNKNOWN
    if bad and sem.shape[0]:
        cls[np.all(np.isneginf(sem), axis=1)] = UNKNOWN
    return cls


def _sbki_argmax(alpha: np.ndarray, alpha0: float, ignore=()) -> np.ndarray:
    a = alpha.copy()
    at_prior = np.all(a == alpha0, axis=1)
    a[:, [c + 1 for c in ignore if 0 <= c < a.shape[1] - 1]] = -np.inf
    idx = np.argmax(a, axis=1).astype(np.int64) if a.shape[0] else np.empty(0, np.int64)
    cls = np.where(idx == 0, FREE, idx - 1)
    cls[at_prior] = UNKNOWN
    return cls


def _osbki_state(a_free, a_occ, alpha0) -> np.ndarray:
    at_prior = (a_free == alpha0) & (a_occ == alpha0)
    return np.where(at_prior, 0, np.where(a_occ > a_free, 1, -1)).astype(np.int8)


def classify_sbki(alpha, alpha0: float = 0.001, ignore=()) -> int:
    """FREE, UNKNOWN, or the winning class id of one S-BKI voxel."""
    a = np.asarray(alpha, dtype=np.float64)[None, :]
    return int(_sbki_argmax(a, alpha0, ignore)[0])


def classify_osbki(alpha_free: float, alpha_occ: float, alpha_sem, alpha0: float = 0.001, ignore=()):
    """(class id or None, state) of one OS-BKI voxel; free voxels carry no class."""
    state = int(_osbki_state(np.array([alpha_free]), np.array([alpha_occ]), alpha0)[0])
    name = {1: "occupied", -1: "free", 0: "unknown"}[state]
    if state <= 0:
        return None, name
    cls = int(_sem_argmax(np.asarray(alpha_sem, dtype=np.float64)[None, :], alpha0, ignore)[0])
    return (cls if cls >= 0 else None), name


def sbki_update(m: SbkiMap, cloud: LabeledCloud) -> SbkiMap:
    m.integrate_cloud(cloud)
    return m


def osbki_update(m: OsbkiMap, cloud: LabeledCloud) -> OsbkiMap:
    m.integrate_cloud(cloud)
    return m
