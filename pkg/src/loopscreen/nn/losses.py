"""Softmax cross-entropy with the log-sum-exp trick."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BadLabel, ShapeMismatch


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> LossValue:
    """Mean negative log-likelihood over the batch.

    gradient = (softmax(logits) - one_hot(labels)) / batch, so gradient rows
    always sum to zero.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeMismatch(f"logits must be [batch, classes], got shape {logits.shape}")
    batch, classes = logits.shape
    if batch < 1:
        raise ShapeMismatch("empty batch")
    if labels.shape != (batch,):
        raise ShapeMismatch(f"labels must be [{batch}], got shape {labels.shape}")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= classes:
        raise BadLabel(f"labels must be integers in [0, {classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = float(-log_probs[np.arange(batch), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(batch), labels] -= 1.0
    grad /= batch
    return LossValue(value, grad.astype(logits.dtype))
