"""Adam with bias-corrected moments, as a pure function over parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .model import ModelParams
from .numerics import InvalidInputError


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()}, 0)


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Return ``(new_params, new_state)``; inputs are left untouched."""
    if not (0 < beta1 < 1 and 0 < beta2 < 1) or lr < 0 or eps <= 0:
        raise InvalidInputError("need 0 < beta1, beta2 < 1, lr >= 0 and eps > 0")
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new, m, v = {}, {}, {}
    for k, p in params.arrays.items():
        g = grads[k]
        m[k] = beta1 * state.m.get(k, 0.0) + (1.0 - beta1) * g
        v[k] = beta2 * state.v.get(k, 0.0) + (1.0 - beta2) * (g * g)
        new[k] = p - lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
    return ModelParams(new), AdamState(m, v, t)
