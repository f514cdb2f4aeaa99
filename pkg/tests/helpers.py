"""Shared loss table and gradient-check driver for the loss tests."""

import numpy as np

from nacl.losses import (ce_loss, ecp_loss, focal_loss, ls_loss, mbls_loss, nacl_loss, soft_dice_loss,
                         svls_loss)
from nacl.numerics import one_hot, softmax
from nacl.priors import gaussian_kernel, make_kernel, prior_map
from oracles import central_diff

STEP = 1e-5
KINK = 1e-3  # pixels this close to a kink are left out of the comparison
FLOOR = 1e-6  # absolute floor of the relative-error denominator


def _none(z, y):
    return np.zeros(z.shape[1:], dtype=bool)


def _mbls_kinks(margin):
    def f(z, y):
        s = np.sort(z, axis=0)
        gap = z.max(axis=0)[None] - z - margin
        return (np.abs(gap) < KINK).any(axis=0) | (s[-1] - s[-2] < KINK)
    return f


def _nacl_kinks(space):
    def f(z, y):
        tau = prior_map(y, make_kernel("mean"), z.shape[0])
        t = z if space == "logits" else softmax(z)
        return (np.abs(t - tau) < KINK).any(axis=0)
    return f


def loss_table():
    """name -> (f(logits, labels) -> LossResult, kink mask function)."""
    k3 = gaussian_kernel(3, 2.0)
    t = {
        "CE": (lambda z, y: ce_loss(z, one_hot(y, z.shape[0])), _none),
        "LS": (lambda z, y: ls_loss(z, one_hot(y, z.shape[0]), 0.1), _none),
        "FL": (lambda z, y: focal_loss(z, one_hot(y, z.shape[0]), 3.0), _none),
        "ECP": (lambda z, y: ecp_loss(z, one_hot(y, z.shape[0]), 0.1), _none),
        "SVLS": (lambda z, y: svls_loss(z, y, k3), _none),
        "MbLS": (lambda z, y: mbls_loss(z, one_hot(y, z.shape[0]), 5.0, 0.1), _mbls_kinks(5.0)),
        "DSC": (lambda z, y: soft_dice_loss(z, one_hot(y, z.shape[0])), _none),
    }
    for pen in ("L1", "L2"):
        for space in ("logits", "softmax"):
            kinks = _nacl_kinks(space) if pen == "L1" else _none
            t[f"NACL-{pen}-{space}"] = (
                lambda z, y, pen=pen, space=space: nacl_loss(z, y, 0.1, pen, space), kinks)
    return t


def random_instance(rng, k=3, h=4, w=4, scale=3.0):
    return rng.normal(scale=scale, size=(k, h, w)), rng.integers(0, k, size=(h, w))


def grad_rel_error(fn, kinks, z, y):
    """Max elementwise relative error between analytic and central-difference gradients."""
    analytic = fn(z, y).grad
    numeric = central_diff(lambda x: fn(x, y).value, z, STEP)
    keep = ~kinks(z, y)
    a = analytic[:, keep]
    b = numeric[:, keep]
    if a.size == 0:
        return 0.0
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), FLOOR)).max())


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE = []


def record(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok
