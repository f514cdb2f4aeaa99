"""Pure numpy versions of the hot kernels.

Summation order matches ``_ext.pyx`` offset-for-offset so both backends
return bit-identical results.
"""

import numpy as np


def patch_aggregate(onehot, weights):
    """Weighted neighbourhood sum of each channel with edge replication.

    ``onehot`` is (K, H, W), ``weights`` is (d1, d2) with odd sides.
    Returns the unnormalised sum ``sum_i w_i * y_i`` over every patch.
    """
    y = np.ascontiguousarray(onehot, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    d1, d2 = w.shape
    r1, r2 = d1 // 2, d2 // 2
    _, h, wd = y.shape
    padded = np.pad(y, ((0, 0), (r1, r1), (r2, r2)), mode="edge")
    out = np.zeros_like(y)
    for a in range(d1):
        for b in range(d2):
            if w[a, b] != 0.0:
                out += w[a, b] * padded[:, a:a + h, b:b + wd]
    return out


def im2col(x, kh, kw):
    """(B, C, H, W) -> (B, C*kh*kw, H*W) patches under edge replication."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    bsz, c, h, w = x.shape
    r1, r2 = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (r1, r1), (r2, r2)), mode="edge")
    cols = np.empty((bsz, c, kh * kw, h, w))
    for a in range(kh):
        for b in range(kw):
            cols[:, :, a * kw + b] = padded[:, :, a:a + h, b:b + w]
    return cols.reshape(bsz, c * kh * kw, h * w)


def col2im(cols, c, h, w, kh, kw):
    """Adjoint of :func:`im2col`: scatter patch gradients back onto pixels."""
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    bsz = cols.shape[0]
    r1, r2 = kh // 2, kw // 2
    cols = cols.reshape(bsz, c, kh * kw, h, w)
    padded = np.zeros((bsz, c, h + 2 * r1, w + 2 * r2))
    for a in range(kh):
        for b in range(kw):
            padded[:, :, a:a + h, b:b + w] += cols[:, :, a * kw + b]
    # fold replicated borders back onto the edge pixels: rows, then columns
    for a in range(r1):
        padded[:, :, r1, :] += padded[:, :, a, :]
        padded[:, :, r1 + h - 1, :] += padded[:, :, r1 + h + a, :]
    for b in range(r2):
        padded[:, :, :, r2] += padded[:, :, :, b]
        padded[:, :, :, r2 + w - 1] += padded[:, :, :, r2 + w + b]
    return np.ascontiguousarray(padded[:, :, r1:r1 + h, r2:r2 + w])
