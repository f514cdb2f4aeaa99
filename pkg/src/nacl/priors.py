"""Neighbourhood class-proportion priors.

A prior assigns every pixel a K-vector of soft class proportions obtained by
weighting the one-hot labels of its patch with a kernel. Patches at the image
border use edge replication, so every pixel sees the full kernel and the
proportions stay on the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from . import _backend
from .numerics import InvalidInputError, one_hot

Size = Union[int, Tuple[int, int]]


@dataclass(frozen=True)
class Kernel:
    weights: np.ndarray = field(repr=False)
    sigma: Optional[float] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidInputError("kernel weights must be 2-D")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise InvalidInputError(f"kernel sides must be odd, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
            raise InvalidInputError("kernel weights must be finite, nonnegative and not all zero")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> Tuple[int, int]:
        return self.weights.shape

    @property
    def center(self) -> Tuple[int, int]:
        return self.weights.shape[0] // 2, self.weights.shape[1] // 2

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def without_center(self) -> np.ndarray:
        w = self.weights.copy()
        w[self.center] = 0.0
        return w


def _size(size: Size) -> Tuple[int, int]:
    d1, d2 = (size, size) if np.isscalar(size) else tuple(size)
    if int(d1) != d1 or int(d2) != d2 or d1 < 1 or d2 < 1 or d1 % 2 == 0 or d2 % 2 == 0:
        raise InvalidInputError(f"kernel size must be odd positive integers, got {size}")
    return int(d1), int(d2)


def gaussian_kernel(size: Size = 3, sigma: float = 2.0) -> Kernel:
    """Unnormalised Gaussian window, ``exp(-(dr^2 + dc^2) / (2 sigma^2))``.

    The centre weight is exactly 1.
    """
    d1, d2 = _size(size)
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    dr = np.arange(d1, dtype=np.float64) - d1 // 2
    dc = np.arange(d2, dtype=np.float64) - d2 // 2
    sq = dr[:, None] ** 2 + dc[None, :] ** 2
    return Kernel(np.exp(-sq / (2.0 * sigma * sigma)), sigma=float(sigma))


def mean_kernel(size: Size = 3) -> Kernel:
    """Uniform window of ones (the infinite-sigma Gaussian)."""
    return Kernel(np.ones(_size(size)))


def svls_smooth(labels, kernel: Kernel, num_classes: int) -> np.ndarray:
    """Spatially varying smoothed labels, shape (K, H, W).

    Each pixel gets ``sum_i w_i y_i / sum_i w_i`` over its patch, centre included.
    """
    y = one_hot(labels, num_classes)
    return _backend.patch_aggregate(y, kernel.weights) / kernel.total


def prior_map(labels, kernel: Kernel, num_classes: int, exclude_center: bool = False,
              normalize: bool = True) -> np.ndarray:
    """Per-pixel weighted class proportions.

    With ``exclude_center`` the centre weight is dropped before aggregation.
    ``normalize=False`` returns the raw weighted counts (used by the SVLS
    decomposition, where the shared normaliser is factored out).
    """
    y = one_hot(labels, num_classes)
    w = kernel.without_center() if exclude_center else np.array(kernel.weights)
    total = w.sum()
    if total <= 0:
        raise InvalidInputError("effective kernel weights sum to zero")
    agg = _backend.patch_aggregate(y, w)
    return agg / total if normalize else agg


def make_kernel(kind: str, size: Size = 3, sigma: Optional[float] = None) -> Kernel:
    kind = kind.lower()
    if kind == "mean":
        return mean_kernel(size)
    if kind == "gaussian":
        return gaussian_kernel(size, 2.0 if sigma is None else sigma)
    raise InvalidInputError(f"unknown kernel kind {kind!r}; expected 'mean' or 'gaussian'")

