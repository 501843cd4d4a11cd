"""Average accuracy, R^2, prediction error and the prediction robustness score."""

from __future__ import annotations

import numpy as np

from .fusion import Task


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with rows indexed by the true class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def average_accuracy(cm) -> float:
    """Mean per-class recall over classes that have at least one true sample."""
    cm = np.asarray(cm)
    support = cm.sum(axis=1)
    seen = support > 0
    if not seen.any():
        raise ValueError("confusion matrix has no samples")
    return float(np.mean(np.diag(cm)[seen] / support[seen]))


def r2_score(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape or target.size < 2:
        raise ValueError("r2_score needs two equally sized sequences of at least 2 samples")
    ss_tot = np.sum((target - target.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("r2_score is undefined for a constant target")
    return float(1.0 - np.sum((target - pred) ** 2) / ss_tot)


def mean_squared_error(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def quality(task: Task, predictions, targets) -> float:
    """AA for classification (predictions are probabilities), R^2 for regression."""
    if task.is_classification:
        labels = np.argmax(np.asarray(predictions), axis=-1)
        return average_accuracy(confusion_matrix(targets, labels, task.n_classes))
    return r2_score(predictions, targets)


def prediction_error(task: Task, predictions, targets) -> float:
    """1 - AA for classification, MSE for regression."""
    if task.is_classification:
        return 1.0 - quality(task, predictions, targets)
    return mean_squared_error(predictions, targets)


def prs(error_full: float, error_missing: float) -> float:
    """Prediction robustness score: 1 when the missing-view error is no worse, else E_full / E_miss."""
    if not np.isfinite(error_full) or np.isnan(error_missing) or error_full < 0 or error_missing < 0:
        raise ValueError("errors must be non-negative and the full-view error finite")
    if error_missing <= error_full:
        return 1.0
    if np.isinf(error_missing):
        return 0.0
    return float(error_full / error_missing)
