"""Training loop for the toy segmenter."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .data import SynthConfig, generate_dataset
from .losses import LossConfig, compute_loss
from .metrics import MetricsRecord, dice, evaluate
from .model import ModelParams, backward_batch, forward_batch, init_params
from .numerics import InvalidInputError, softmax
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

# fixed edges for the per-epoch max-logit histograms
HIST_EDGES = np.linspace(-10.0, 30.0, 81)
# split streams for generate_dataset
TRAIN, VAL, TEST = 0, 1, 2


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 40
    batch_size: int = 4
    lr: float = 1e-3
    lr_final: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    n_train: int = 200
    n_val: int = 40
    n_test: int = 60
    train_fraction: float = 1.0
    width: int = 16
    bins: int = 15

    def __post_init__(self):
        for name in ("epochs", "batch_size", "n_train", "n_val", "n_test", "width", "bins"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {v}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("beta1 and beta2 must lie in (0, 1)")
        if self.lr < 0 or self.lr_final < 0 or self.eps <= 0:
            raise InvalidInputError("learning rates must be nonnegative and eps positive")
        if not 0 < self.train_fraction <= 1:
            raise InvalidInputError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")

    def lr_at(self, epoch: int) -> float:
        """Two-phase schedule: ``lr`` for the first half of the epochs, ``lr_final`` after."""
        return self.lr if epoch < (self.epochs + 1) // 2 else self.lr_final

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown train fields: {sorted(unknown)}")
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig.from_dict(d["loss"])
        return cls(**d)


@dataclass
class RunArtifacts:
    params: ModelParams
    loss_curve: List[float]
    val_dsc: List[float]
    best_epoch: int
    val_metrics: MetricsRecord
    test_metrics: MetricsRecord
    reliability: Dict[str, object]
    per_image: List[dict]
    logit_hist: List[np.ndarray]
    hist_edges: np.ndarray
    diagnostics: Dict[str, object]


def _stack(pairs):
    x = np.stack([img for img, _ in pairs])[:, None]
    y = np.stack([lab for _, lab in pairs])
    return x, y


def predict(params: ModelParams, images, chunk: int = 32) -> np.ndarray:
    out = []
    for i in range(0, len(images), chunk):
        logits, _ = forward_batch(params, images[i:i + chunk])
        out.append(logits)
    return np.concatenate(out) if out else np.zeros((0,))


def _mean_fg_dice(logits, labels) -> float:
    k = logits.shape[1]
    preds = logits.argmax(axis=1)
    return float(np.mean([np.mean([dice(p, g, c) for c in range(1, k)]) for p, g in zip(preds, labels)]))


def logit_diagnostics(logits, labels) -> Dict[str, object]:
    """Winner-logit magnitude and per-class mean |logit| profiles.

    ``class_profiles[c]`` is the mean absolute logit vector over pixels whose
    ground truth is ``c``.
    """
    k = logits.shape[1]
    winner = logits.max(axis=1)
    absz = np.abs(logits)
    profiles = {}
    for c in range(k):
        m = labels == c
        if m.any():
            profiles[str(c)] = [float(absz[:, j][m].mean()) for j in range(k)]
    fg = labels != 0
    return {
        "winner_abs_logit_mean": float(np.abs(winner).mean()),
        "winner_abs_logit_mean_fg": float(np.abs(winner[fg]).mean()) if fg.any() else float("nan"),
        "max_logit_mean": float(winner.mean()),
        "class_profiles": profiles,
    }


def train(train_config: TrainConfig, synth_config: SynthConfig, method: str = "",
          params: Optional[ModelParams] = None) -> RunArtifacts:
    """Train, pick the epoch with the best validation mean DSC, evaluate on test.

    Deterministic in ``(train_config.seed, synth_config.seed)``.
    """
    cfg = train_config
    k = synth_config.classes
    n_used = max(1, int(np.floor(cfg.n_train * cfg.train_fraction)))
    train_set = generate_dataset(synth_config, cfg.n_train, TRAIN)[:n_used]
    xv, yv = _stack(generate_dataset(synth_config, cfg.n_val, VAL))
    xt, yt = _stack(generate_dataset(synth_config, cfg.n_test, TEST))
    xtr, ytr = _stack(train_set)

    if params is None:
        params = init_params(k, 1, cfg.width, seed=cfg.seed)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 7])

    best = params.copy()
    best_dsc = _mean_fg_dice(predict(params, xv), yv)
    best_epoch = -1  # -1: the initialisation
    loss_curve, val_curve, hists = [], [], []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n_used)
        total, count = 0.0, 0
        for start in range(0, n_used, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = forward_batch(params, xtr[idx])
            grad = np.empty_like(logits)
            for i, j in enumerate(idx):
                res = compute_loss(cfg.loss, logits[i], ytr[j])
                if not np.isfinite(res.value):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch starting {start} ({method or cfg.loss.kind})")
                total += res.value
                grad[i] = res.grad / len(idx)
            count += len(idx)
            grads = backward_batch(params, cache, grad)
            params, state = adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            if not params.is_finite():
                raise TrainingDivergedError(f"non-finite parameters at epoch {epoch} ({method or cfg.loss.kind})")
        loss_curve.append(total / count)
        val_logits = predict(params, xv)
        vd = _mean_fg_dice(val_logits, yv)
        val_curve.append(vd)
        hists.append(np.histogram(np.clip(val_logits.max(axis=1), HIST_EDGES[0], HIST_EDGES[-1]),
                                  bins=HIST_EDGES)[0])
        if vd > best_dsc:
            best_dsc, best, best_epoch = vd, params.copy(), epoch
        log.info("%s epoch %d loss %.5f val dsc %.4f", method or cfg.loss.kind, epoch, loss_curve[-1], vd)

    modes = ("gt_foreground", "union_foreground")
    val_logits = predict(best, xv)
    val_rec, _, _ = evaluate([softmax(z) for z in val_logits], list(yv), modes, cfg.bins, method)
    test_logits = predict(best, xt)
    test_rec, pooled, per_image = evaluate([softmax(z) for z in test_logits], list(yt), modes, cfg.bins, method)
    diagnostics = logit_diagnostics(test_logits, yt)
    diagnostics["final_params_finite"] = params.is_finite()
    return RunArtifacts(best, loss_curve, val_curve, best_epoch, val_rec, test_rec, pooled, per_image,
                        hists, HIST_EDGES.copy(), diagnostics)
