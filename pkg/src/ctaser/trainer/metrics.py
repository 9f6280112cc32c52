"""Confusion matrices and unweighted average recall."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def confusion_matrix(labels, predictions, n_classes: int) -> np.ndarray:
    """Counts with true class as row, predicted class as column."""
    labels = np.asarray(labels, dtype=int)
    predictions = np.asarray(predictions, dtype=int)
    if labels.shape != predictions.shape:
        raise MetricError(f"length mismatch: {labels.shape} labels vs {predictions.shape} predictions")
    if labels.size == 0:
        raise MetricError("empty label set")
    if labels.min() < 0 or labels.max() >= n_classes or predictions.min() < 0 or predictions.max() >= n_classes:
        raise MetricError("label or prediction outside configured class range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def uar(labels, predictions, n_classes: int) -> float:
    """Mean of per-class recalls.

    Classes absent from ``labels`` contribute no recall term (excluding
    them avoids the undefined 0/0 rather than scoring it as zero).
    """
    cm = confusion_matrix(labels, predictions, n_classes)
    support = cm.sum(axis=1)
    present = support > 0
    recalls = np.diag(cm)[present] / support[present]
    return float(recalls.mean())
