"""Confusion-matrix segmentation metrics."""
from __future__ import annotations

import numpy as np

IGNORE_INDEX = 255


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns are predictions.

    Matrices built from disjoint shards can be merged with ``+``.
    """

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_classes, num_classes) or (counts < 0).any():
            raise ValueError("counts must be a non-negative K x K matrix")
        self.counts = counts

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, predictions, truth, ignore_index: int = IGNORE_INDEX) -> "ConfusionMatrix":
        return accumulate(self, predictions, truth, ignore_index)

    def miou(self):
        return miou(self)


def accumulate(cm: ConfusionMatrix, predictions, truth, ignore_index: int = IGNORE_INDEX) -> ConfusionMatrix:
    """Add one count at ``cm[truth, prediction]`` for every non-ignored pixel (in place)."""
    pred = np.asarray(predictions).ravel()
    gt = np.asarray(truth).ravel()
    if np.shape(predictions) != np.shape(truth):
        raise ValueError(f"prediction dims {np.shape(predictions)} != truth dims {np.shape(truth)}")
    k = cm.num_classes
    keep = gt != ignore_index
    pred, gt = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
    for what, arr in (("truth", gt), ("prediction", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{what} contains class indices outside [0, {k})")
    cm.counts += np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Mean IoU over classes present in truth or prediction, and per-class IoU (nan where absent)."""
    if cm.total == 0:
        raise ValueError("confusion matrix holds no evaluated pixels")
    c = cm.counts.astype(np.float64)
    inter = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, np.nan)
    return float(np.nanmean(iou)), iou
