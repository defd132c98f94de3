"""Pixelwise semantic metrics on back-projected frames: IoU, mIoU, invR, mPAcc.

Pixels whose ground truth is void are skipped. Rendered pixels that carry
no class (free or unknown) count as false negatives of their ground-truth
class and as false positives of nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import RejectedInputError, check_same_shape


@dataclass
class ConfusionAccumulator:
    n_classes: int
    counts: np.ndarray = field(default=None)
    invalid_by_class: np.ndarray = field(default=None)
    n_pixels: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_classes, self.n_classes), np.int64)
        if self.invalid_by_class is None:
            self.invalid_by_class = np.zeros(self.n_classes, np.int64)

    @property
    def invalid_count(self) -> int:
        return int(self.invalid_by_class.sum())

    @property
    def total_valid_gt_count(self) -> int:
        return int(self.counts.sum()) + self.invalid_count

    def merge(self, other: ConfusionAccumulator) -> ConfusionAccumulator:
        if other.n_classes != self.n_classes:
            raise RejectedInputError("cannot merge accumulators over different class sets")
        return ConfusionAccumulator(
            self.n_classes,
            self.counts + other.counts,
            self.invalid_by_class + other.invalid_by_class,
            self.n_pixels + other.n_pixels,
        )

    def accumulate(self, rendered, gt, void_id: int | None) -> ConfusionAccumulator:
        return accumulate(self, rendered, gt, void_id)


def accumulate(acc: ConfusionAccumulator, rendered, gt, void_id: int | None) -> ConfusionAccumulator:
    """Add one frame's pixels to ``acc`` in place and return it."""
    pred = np.asarray(getattr(rendered, "labels", rendered))
    gt = np.asarray(gt)
    check_same_shape(pred, gt, "rendered labels vs ground truth")
    n = acc.n_classes
    keep = gt != void_id if void_id is not None else np.ones(gt.shape, bool)
    g = gt[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= n):
        raise RejectedInputError(f"ground-truth ids must be in [0, {n})")
    invalid = p < 0
    if p.size and p.max() >= n:
        raise RejectedInputError(f"predicted ids must be below {n}")
    acc.invalid_by_class += np.bincount(g[invalid], minlength=n)
    acc.counts += np.bincount(g[~invalid] * n + p[~invalid], minlength=n * n).reshape(n, n)
    acc.n_pixels += int(gt.size)
    return acc


@dataclass
class EvalReport:
    evaluated_classes: list[int]
    per_class_iou: np.ndarray
    per_class_pacc: np.ndarray
    miou: float
    inv_ratio: float
    mpacc: float
    invalid_count: int = 0
    total_valid_gt_count: int = 0
    empty: bool = False
    class_names: dict[int, str] = field(default_factory=dict)

    def summary(self) -> dict:
        return {"miou": self.miou, "inv_ratio": self.inv_ratio, "mpacc": self.mpacc}


def finalize(
    acc: ConfusionAccumulator,
    gt_present_classes=None,
    class_names=None,
    inv_normalization: str = "evaluated",
) -> EvalReport:
    """Reduce the accumulator to per-class IoU / pixel accuracy and their means.

    Means run over ``gt_present_classes`` (default: every class with at least
    one evaluated ground-truth pixel); classes with no ground-truth pixels
    are dropped from both means. ``inv_normalization="all"`` divides the
    invalid count by every accumulated pixel, void included.
    """
    if inv_normalization not in ("evaluated", "all"):
        raise RejectedInputError("inv_normalization must be 'evaluated' or 'all'")
    c = acc.counts
    tp = np.diag(c).astype(np.float64)
    gt_total = c.sum(axis=1) + acc.invalid_by_class
    fn = gt_total - tp
    fp = c.sum(axis=0) - tp
    if gt_present_classes is None:
        classes = [int(k) for k in np.flatnonzero(gt_total > 0)]
    else:
        classes = sorted(int(k) for k in gt_present_classes if gt_total[int(k)] > 0)
    idx = np.array(classes, dtype=np.int64)
    iou = tp[idx] / (tp[idx] + fp[idx] + fn[idx]) if idx.size else np.empty(0)
    pacc = tp[idx] / (tp[idx] + fn[idx]) if idx.size else np.empty(0)
    total = acc.total_valid_gt_count
    denom = total if inv_normalization == "evaluated" else acc.n_pixels
    return EvalReport(
        evaluated_classes=classes,
        per_class_iou=iou,
        per_class_pacc=pacc,
        miou=float(iou.mean()) if iou.size else float("nan"),
        inv_ratio=acc.invalid_count / denom if denom else float("nan"),
        mpacc=float(pacc.mean()) if pacc.size else float("nan"),
        invalid_count=acc.invalid_count,
        total_valid_gt_count=total,
        empty=total == 0,
        class_names=dict(class_names or {}),
    )
