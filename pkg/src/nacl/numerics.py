"""Array primitives shared by the priors, losses and trainer.

All arrays are float64, channel-first (K, H, W).
"""

from __future__ import annotations

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


def as_float_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_labels(labels, num_classes: int) -> np.ndarray:
    """Validate an integer label map of shape (H, W) against ``num_classes``."""
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise InvalidInputError(f"label map must be 2-D, got shape {lab.shape}")
    if not np.issubdtype(lab.dtype, np.integer):
        if not np.all(np.mod(lab, 1) == 0):
            raise InvalidInputError("label map must hold integers")
        lab = lab.astype(np.int64)
    if num_classes < 1:
        raise InvalidInputError("number of classes must be positive")
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        raise InvalidInputError(f"labels must lie in [0, {num_classes})")
    return lab.astype(np.int64, copy=False)


def softmax(logits, axis: int = 0) -> np.ndarray:
    """Channel softmax computed with max subtraction.

    >>> softmax(np.zeros((3, 1, 1)))[:, 0, 0]
    array([0.33333333, 0.33333333, 0.33333333])
    """
    z = as_float_array(logits, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = 0) -> np.ndarray:
    z = as_float_array(logits, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def one_hot(labels, num_classes: int) -> np.ndarray:
    """Encode an (H, W) label map as a (K, H, W) binary float array."""
    lab = check_labels(labels, num_classes)
    return (np.arange(num_classes)[:, None, None] == lab[None]).astype(np.float64)
