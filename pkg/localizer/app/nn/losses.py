"""Loss functions returning (scalar loss, gradient wrt the prediction/logits)."""

from __future__ import annotations

import numpy as np

from app.errors import DataValidationError, ShapeError
from app.nn.functional import log_softmax, softmax


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


def sparse_cce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean -ln softmax(logits)[label] over the batch, via log-sum-exp."""
    if logits.ndim != 2:
        raise ShapeError(f"sparse_cce expects (N, C) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"sparse_cce expects {logits.shape[0]} labels, got {labels.shape}")
    classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataValidationError(f"labels must lie in [0, {classes})")

    rows = np.arange(logits.shape[0])
    loss = float(-log_softmax(logits)[rows, labels].mean())
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / logits.shape[0]
