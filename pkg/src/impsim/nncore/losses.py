"""Scalar losses returning ``(loss, dloss/dinput)``."""

from __future__ import annotations

import numpy as np

from .layers import ShapeError


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes differ {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy: {logits.shape[0]} rows but {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ShapeError("cross_entropy: label out of range")
    n = len(labels)
    lp = log_softmax(logits)
    loss = -float(lp[np.arange(n), labels].mean())
    grad = np.exp(lp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
