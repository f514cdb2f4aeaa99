"""Tiny fully convolutional segmenter with hand-written backpropagation.

Three 3x3 convolutions (stride 1, edge-replicated borders) with ReLU between
them: ``in -> width -> width -> K``. Inputs are batches (B, C, H, W) with
intensities in [0, 1]; they are centred and scaled before the first layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import _backend
from .numerics import InvalidInputError

KSIZE = 3
LAYERS = ("1", "2", "3")
# fixed input standardisation: images in [0, 1] are mapped to [-2, 2]
INPUT_SHIFT = 0.5
INPUT_SCALE = 4.0


class InvalidStateError(RuntimeError):
    pass


@dataclass
class ModelParams:
    """Conv weights ``w{i}`` of shape (Cout, Cin, 3, 3) and biases ``b{i}`` of shape (Cout,)."""

    arrays: Dict[str, np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.arrays["b3"].shape[0]

    @property
    def in_channels(self) -> int:
        return self.arrays["w1"].shape[1]

    @property
    def width(self) -> int:
        return self.arrays["b1"].shape[0]

    def names(self) -> List[str]:
        return [f"{kind}{i}" for i in LAYERS for kind in ("w", "b")]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names()])

    def unflatten(self, flat) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        out, pos = {}, 0
        for n in self.names():
            a = self.arrays[n]
            out[n] = flat[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        if pos != flat.size:
            raise InvalidInputError(f"expected {pos} parameters, got {flat.size}")
        return ModelParams(out)

    def arch_signature(self) -> str:
        return ";".join(f"{n}:{'x'.join(map(str, self.arrays[n].shape))}" for n in self.names())

    def arch_hash(self) -> bytes:
        return hashlib.sha256(self.arch_signature().encode()).digest()[:8]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def init_params(num_classes: int, in_channels: int = 1, width: int = 16, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    if num_classes < 1 or in_channels < 1 or width < 1:
        raise InvalidInputError("channel counts must be positive")
    rng = np.random.default_rng(seed)
    chans = [in_channels, width, width, num_classes]
    arrays = {}
    for i, name in enumerate(LAYERS):
        cin, cout = chans[i], chans[i + 1]
        limit = np.sqrt(6.0 / (cin * KSIZE * KSIZE + cout * KSIZE * KSIZE))
        arrays[f"w{name}"] = rng.uniform(-limit, limit, size=(cout, cin, KSIZE, KSIZE))
        arrays[f"b{name}"] = np.zeros(cout)
    return ModelParams(arrays)


def zero_params(num_classes: int, in_channels: int = 1, width: int = 16) -> ModelParams:
    p = init_params(num_classes, in_channels, width)
    return ModelParams({k: np.zeros_like(v) for k, v in p.arrays.items()})


def as_batch(image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise InvalidInputError(f"image must be (H, W), (C, H, W) or (B, C, H, W), got {x.shape}")


def _conv(x, w, b):
    bsz, _, h, wd = x.shape
    cols = _backend.im2col(x, KSIZE, KSIZE)
    out = np.matmul(w.reshape(w.shape[0], -1), cols) + b[None, :, None]
    return out.reshape(bsz, w.shape[0], h, wd), cols


def _conv_backward(g, cols, w, in_shape):
    bsz, cin, h, wd = in_shape
    g2 = g.reshape(bsz, w.shape[0], h * wd)
    dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = g2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(w.shape[0], -1).T, g2)
    return _backend.col2im(dcols, cin, h, wd, KSIZE, KSIZE), dw, db


def forward_batch(params: ModelParams, x) -> Tuple[np.ndarray, dict]:
    """Logits (B, K, H, W) and the activations needed by :func:`backward_batch`."""
    if not params.is_finite():
        raise InvalidStateError("model parameters contain non-finite values")
    x = as_batch(x)
    if x.shape[1] != params.in_channels:
        raise InvalidInputError(f"expected {params.in_channels} input channels, got {x.shape[1]}")
    a = params.arrays
    z1, c1 = _conv((x - INPUT_SHIFT) * INPUT_SCALE, a["w1"], a["b1"])
    h1 = np.maximum(z1, 0.0)
    z2, c2 = _conv(h1, a["w2"], a["b2"])
    h2 = np.maximum(z2, 0.0)
    z3, c3 = _conv(h2, a["w3"], a["b3"])
    cache = {"shapes": (x.shape, h1.shape, h2.shape), "cols": (c1, c2, c3), "pre": (z1, z2)}
    return z3, cache


def backward_batch(params: ModelParams, cache: dict, grad_logits) -> Dict[str, np.ndarray]:
    g = np.asarray(grad_logits, dtype=np.float64)
    s0, s1, s2 = cache["shapes"]
    expected = (s2[0], params.num_classes, s2[2], s2[3])
    if g.shape != expected:
        raise InvalidInputError(f"grad_logits shape {g.shape} does not match logits {expected}")
    a = params.arrays
    c1, c2, c3 = cache["cols"]
    z1, z2 = cache["pre"]
    grads = {}
    g, grads["w3"], grads["b3"] = _conv_backward(g, c3, a["w3"], s2)
    g = g * (z2 > 0)
    g, grads["w2"], grads["b2"] = _conv_backward(g, c2, a["w2"], s1)
    g = g * (z1 > 0)
    _, grads["w1"], grads["b1"] = _conv_backward(g, c1, a["w1"], s0)
    return grads


def forward(params: ModelParams, image) -> np.ndarray:
    """Logits for one image: (K, H, W). Accepts (H, W) or (C, H, W)."""
    x = np.asarray(image)
    logits, _ = forward_batch(params, x)
    return logits[0] if x.ndim < 4 else logits


def backward(params: ModelParams, image, grad_logits) -> Dict[str, np.ndarray]:
    """Parameter gradients of ``sum(grad_logits * forward(params, image))``."""
    x = np.asarray(image)
    _, cache = forward_batch(params, x)
    g = np.asarray(grad_logits, dtype=np.float64)
    if x.ndim < 4:
        g = g[None]
    return backward_batch(params, cache, g)
