"""Segmentation losses with analytic gradients w.r.t. the logits.

Every loss takes a single image's logits of shape (K, H, W) and returns a
:class:`LossResult` whose value is averaged over the H*W pixels (the soft
Dice term is per image). Gradients are exact except at the kinks of the L1
and hinge penalties, where the subgradient 0 is used.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .numerics import InvalidInputError, as_float_array, check_labels, log_softmax, one_hot, softmax
from .priors import Kernel, make_kernel, prior_map, svls_smooth

LOG_FLOOR = -745.0
DICE_SMOOTH = 1e-6

KINDS = ("CE", "LS", "FL", "ECP", "SVLS", "MbLS", "NACL")
PENALTIES = ("L1", "L2")
TARGET_SPACES = ("logits", "softmax")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    parts: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "mean"
    size: int = 3
    sigma: float = 2.0
    exclude_center: bool = False

    def kernel(self) -> Kernel:
        return make_kernel(self.kind, self.size, self.sigma)


@dataclass(frozen=True)
class LossConfig:
    """Loss selection plus hyperparameters; only fields relevant to ``kind`` are read.

    ``alpha`` is the LS smoothing mass or the ECP entropy weight, ``lam`` the
    MbLS/NACL penalty weight. ``dice_weight`` adds a soft Dice term to any loss
    (the CE+DSC baseline uses 1.0).
    """

    kind: str = "CE"
    alpha: float = 0.1
    gamma: float = 3.0
    margin: float = 5.0
    lam: float = 0.1
    penalty: str = "L1"
    target_space: str = "logits"
    prior: Optional[PriorSpec] = None
    dice_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        for name in ("alpha", "gamma", "margin", "lam", "dice_weight"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and nonnegative, got {v}")
        if self.kind == "LS" and self.alpha >= 1:
            raise InvalidInputError(f"LS alpha must lie in [0, 1), got {self.alpha}")
        if self.penalty not in PENALTIES:
            raise InvalidInputError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        if self.target_space not in TARGET_SPACES:
            raise InvalidInputError(f"target_space must be one of {TARGET_SPACES}, got {self.target_space!r}")
        if self.prior is not None:
            self.prior.kernel()  # validates size / sigma

    def resolved_prior(self) -> PriorSpec:
        if self.prior is not None:
            return self.prior
        return PriorSpec("gaussian", 3, 2.0) if self.kind == "SVLS" else PriorSpec("mean", 3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["prior"] = asdict(self.resolved_prior())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown loss fields: {sorted(unknown)}")
        prior = d.get("prior")
        if isinstance(prior, dict):
            extra = set(prior) - set(PriorSpec.__dataclass_fields__)
            if extra:
                raise InvalidInputError(f"unknown prior fields: {sorted(extra)}")
            d["prior"] = PriorSpec(**prior)
        return cls(**d)

    def with_(self, **kw) -> "LossConfig":
        return replace(self, **kw)


def _check_shapes(logits, target) -> Tuple[np.ndarray, np.ndarray]:
    z = as_float_array(logits, "logits")
    t = np.asarray(target, dtype=np.float64)
    if z.ndim != 3 or z.shape != t.shape:
        raise InvalidInputError(f"logits {z.shape} and target {t.shape} must both be (K, H, W)")
    return z, t


def _logp(z):
    return np.maximum(log_softmax(z), LOG_FLOOR)


def _soft_ce(z, q) -> LossResult:
    n = z.shape[1] * z.shape[2]
    logp = _logp(z)
    p = np.exp(logp)
    value = -(q * logp).sum() / n
    return LossResult(float(value), (p - q) / n, {"ce": float(value)})


def _softmax_backward(p, g):
    """Map dL/dp to dL/dlogits through the channel softmax."""
    return p * (g - (p * g).sum(axis=0, keepdims=True))


def ce_loss(logits, target) -> LossResult:
    """Mean per-pixel cross-entropy against a one-hot (K, H, W) target."""
    z, y = _check_shapes(logits, target)
    return _soft_ce(z, y)


def ls_loss(logits, target, alpha: float = 0.1) -> LossResult:
    if not 0 <= alpha < 1:
        raise InvalidInputError(f"alpha must lie in [0, 1), got {alpha}")
    z, y = _check_shapes(logits, target)
    k = z.shape[0]
    return _soft_ce(z, y * (1 - alpha) + alpha / k)


def focal_loss(logits, target, gamma: float = 3.0) -> LossResult:
    if not np.isfinite(gamma) or gamma < 0:
        raise InvalidInputError(f"gamma must be nonnegative, got {gamma}")
    z, y = _check_shapes(logits, target)
    n = z.shape[1] * z.shape[2]
    logp = _logp(z)
    p = np.exp(logp)
    q = np.clip(1.0 - p, 0.0, None)
    mod = q ** gamma
    value = -((y * mod) * logp).sum() / n
    # d/dp_k of -(1-p)^g log p, times p_k (from dp_k/dl)
    with np.errstate(divide="ignore", invalid="ignore"):
        dmod = np.where(q > 0, gamma * q ** (gamma - 1.0), 0.0) if gamma > 0 else np.zeros_like(q)
    coef = y * (dmod * p * logp - mod)
    grad = coef - p * coef.sum(axis=0, keepdims=True)
    return LossResult(float(value), grad / n, {"focal": float(value)})


def entropy(logits) -> np.ndarray:
    logp = _logp(as_float_array(logits, "logits"))
    return -(np.exp(logp) * logp).sum(axis=0)


def ecp_loss(logits, target, alpha: float = 0.1) -> LossResult:
    """Cross-entropy minus ``alpha`` times the mean prediction entropy."""
    if not np.isfinite(alpha) or alpha < 0:
        raise InvalidInputError(f"alpha must be nonnegative, got {alpha}")
    z, y = _check_shapes(logits, target)
    n = z.shape[1] * z.shape[2]
    res = _soft_ce(z, y)
    logp = _logp(z)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=0)
    value = res.value - alpha * (h.sum() / n)
    # dH/dl_j = -p_j (log p_j + H)
    grad = res.grad + alpha * p * (logp + h[None]) / n
    return LossResult(float(value), grad, {"ce": res.value, "entropy": float(h.mean())})


def svls_loss(logits, labels, kernel: Kernel) -> LossResult:
    z = as_float_array(logits, "logits")
    k = z.shape[0]
    q = svls_smooth(labels, kernel, k)
    z, q = _check_shapes(z, q)
    return _soft_ce(z, q)


def svls_decomposition(logits, labels, kernel: Kernel) -> Tuple[float, float]:
    """Both sides of the SVLS split into hard-label CE plus a prior term.

    ``lhs`` is the SVLS loss scaled by the kernel mass; ``rhs`` is the
    centre-weighted CE plus ``-sum_k tau_k log p_k`` where ``tau`` are the
    unnormalised neighbour counts with the centre excluded. The two agree to
    rounding error. Provided kernels have centre weight 1.
    """
    z = as_float_array(logits, "logits")
    k, h, w = z.shape
    n = h * w
    lhs = kernel.total * svls_loss(z, labels, kernel).value
    tau = prior_map(labels, kernel, k, exclude_center=True, normalize=False)
    center = kernel.weights[kernel.center]
    ce = ce_loss(z, one_hot(labels, k)).value
    constraint = -(tau * _logp(z)).sum() / n
    return float(lhs), float(center * ce + constraint)


def mbls_loss(logits, target, margin: float = 5.0, lam: float = 0.1) -> LossResult:
    """CE plus a hinge on logit distances to the per-pixel max exceeding ``margin``."""
    if not np.isfinite(margin) or margin < 0 or not np.isfinite(lam) or lam < 0:
        raise InvalidInputError("margin and lam must be nonnegative")
    z, y = _check_shapes(logits, target)
    n = z.shape[1] * z.shape[2]
    res = _soft_ce(z, y)
    top = z.argmax(axis=0)
    zmax = np.take_along_axis(z, top[None], axis=0)
    gap = zmax - z - margin
    active = gap > 0
    pen = np.where(active, gap, 0.0).sum()
    dpen = -active.astype(np.float64)
    np.put_along_axis(dpen, top[None], np.take_along_axis(dpen, top[None], 0) + active.sum(axis=0)[None], 0)
    value = res.value + lam * (pen / n)
    return LossResult(float(value), res.grad + lam * dpen / n, {"ce": res.value, "penalty": float(pen / n)})


def nacl_loss(logits, labels, lam: float = 0.1, penalty: str = "L1", target_space: str = "logits",
              kernel: Optional[Kernel] = None, exclude_center: bool = False,
              prior: Optional[np.ndarray] = None) -> LossResult:
    """CE plus ``lam * sum_k pen(t_k - tau_k)`` with ``t`` the logits or softmax.

    ``tau`` is the neighbourhood class-proportion prior of ``labels`` (mean
    3x3 kernel unless given); a precomputed ``prior`` of shape (K, H, W)
    overrides it.
    """
    if not np.isfinite(lam) or lam < 0:
        raise InvalidInputError(f"lam must be nonnegative, got {lam}")
    if penalty not in PENALTIES or target_space not in TARGET_SPACES:
        raise InvalidInputError(f"bad penalty {penalty!r} or target space {target_space!r}")
    z = as_float_array(logits, "logits")
    k = z.shape[0]
    y = one_hot(labels, k)
    z, y = _check_shapes(z, y)
    n = z.shape[1] * z.shape[2]
    if prior is None:
        prior = prior_map(labels, kernel if kernel is not None else make_kernel("mean"), k,
                          exclude_center=exclude_center)
    tau = np.asarray(prior, dtype=np.float64)
    if tau.shape != z.shape:
        raise InvalidInputError(f"prior shape {tau.shape} does not match logits {z.shape}")
    res = _soft_ce(z, y)
    p = np.exp(_logp(z))
    t = z if target_space == "logits" else p
    diff = t - tau
    if penalty == "L1":
        pen = np.abs(diff).sum()
        g = np.sign(diff)
    else:
        pen = (diff * diff).sum()
        g = 2.0 * diff
    if target_space == "softmax":
        g = _softmax_backward(p, g)
    value = res.value + lam * (pen / n)
    return LossResult(float(value), res.grad + lam * g / n, {"ce": res.value, "penalty": float(pen / n)})


def soft_dice_loss(logits, target, smooth: float = DICE_SMOOTH) -> LossResult:
    """``1 - mean_k (2|P_k G_k| + s) / (|P_k| + |G_k| + s)`` on softmax probabilities."""
    z, y = _check_shapes(logits, target)
    p = softmax(z)
    inter = (p * y).sum(axis=(1, 2))
    union = p.sum(axis=(1, 2)) + y.sum(axis=(1, 2)) + smooth
    d = (2 * inter + smooth) / union
    k = z.shape[0]
    value = 1.0 - d.mean()
    g = -(2 * y - d[:, None, None]) / union[:, None, None] / k
    return LossResult(float(value), _softmax_backward(p, g), {"dice": float(value)})


def compute_loss(config: LossConfig, logits, labels) -> LossResult:
    """Evaluate ``config`` on one image given its (H, W) integer label map."""
    z = as_float_array(logits, "logits")
    if z.ndim != 3:
        raise InvalidInputError(f"logits must be (K, H, W), got {z.shape}")
    k = z.shape[0]
    labels = check_labels(labels, k)
    y = one_hot(labels, k)
    kind = config.kind
    if kind == "CE":
        res = ce_loss(z, y)
    elif kind == "LS":
        res = ls_loss(z, y, config.alpha)
    elif kind == "FL":
        res = focal_loss(z, y, config.gamma)
    elif kind == "ECP":
        res = ecp_loss(z, y, config.alpha)
    elif kind == "SVLS":
        res = svls_loss(z, labels, config.resolved_prior().kernel())
    elif kind == "MbLS":
        res = mbls_loss(z, y, config.margin, config.lam)
    else:
        spec = config.resolved_prior()
        res = nacl_loss(z, labels, config.lam, config.penalty, config.target_space,
                        kernel=spec.kernel(), exclude_center=spec.exclude_center)
    if config.dice_weight > 0:
        dsc = soft_dice_loss(z, y)
        res = LossResult(res.value + config.dice_weight * dsc.value,
                         res.grad + config.dice_weight * dsc.grad, {**res.parts, **dsc.parts})
    return res


def default_loss(kind: str) -> LossConfig:
    """Baseline hyperparameters used for the main comparison."""
    if kind == "CE+DSC":
        return LossConfig("CE", dice_weight=1.0)
    return {
        "CE": LossConfig("CE"),
        "LS": LossConfig("LS", alpha=0.1),
        "FL": LossConfig("FL", gamma=3.0),
        "ECP": LossConfig("ECP", alpha=0.1),
        "SVLS": LossConfig("SVLS", prior=PriorSpec("gaussian", 3, 2.0)),
        "MbLS": LossConfig("MbLS", margin=5.0, lam=0.1),
        "NACL": LossConfig("NACL", lam=0.1, penalty="L1", target_space="logits", prior=PriorSpec("mean", 3)),
    }[kind]
