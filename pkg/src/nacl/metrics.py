"""Segmentation and calibration metrics.

Class 0 is background. Calibration metrics are computed over a pixel subset
chosen by a foreground mode, with ``M`` equispaced confidence bins whose
intervals are ``(lo, hi]`` (a confidence of exactly 0 goes to the first bin).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .numerics import InvalidInputError

FOREGROUND_MODES = ("gt_foreground", "union_foreground", "all_pixels")

# +1: higher is better, -1: lower is better
METRIC_DIRECTIONS = {"dsc": 1, "hd": -1, "ece": -1, "cece": -1}


class EmptyEvaluationError(InvalidInputError):
    """No pixels were selected for a calibration metric."""


@dataclass(frozen=True)
class CalibConfig:
    bins: int = 15
    foreground_mode: str = "gt_foreground"

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 1:
            raise InvalidInputError(f"bins must be a positive integer, got {self.bins}")
        if self.foreground_mode not in FOREGROUND_MODES:
            raise InvalidInputError(
                f"foreground_mode must be one of {FOREGROUND_MODES}, got {self.foreground_mode!r}")


@dataclass
class BinStats:
    """Per-bin counts, accuracies and confidences.

    ``count``/``accuracy``/``confidence`` have shape (M,) and describe the
    max-confidence bins; the ``class_*`` arrays have shape (M, K) and are
    filled only by :func:`cece`. Empty bins hold zeros.
    """

    edges: np.ndarray
    count: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray
    class_count: Optional[np.ndarray] = None
    class_accuracy: Optional[np.ndarray] = None
    class_confidence: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.count.sum())

    def ece(self) -> float:
        return float((self.count / self.n * np.abs(self.accuracy - self.confidence)).sum())

    def cece(self) -> float:
        return float((self.class_count / self.n * np.abs(self.class_accuracy - self.class_confidence)).sum())

    def rows(self):
        for i in range(len(self.count)):
            yield (float(self.edges[i]), float(self.edges[i + 1]), int(self.count[i]),
                   float(self.accuracy[i]), float(self.confidence[i]))


class HausdorffResult(NamedTuple):
    distance: float
    degenerate: bool  # exactly one mask empty; distance is the image diagonal


def bin_edges(m: int) -> np.ndarray:
    return np.arange(m + 1, dtype=np.float64) / m


def assign_bins(conf, m: int) -> np.ndarray:
    """Index of the ``(lo, hi]`` bin holding each confidence."""
    idx = np.searchsorted(bin_edges(m), np.asarray(conf, dtype=np.float64), side="left") - 1
    return np.clip(idx, 0, m - 1)


def _masks(pred, gt, k):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred == k, gt == k


def dice(pred, gt, k: int) -> float:
    p, g = _masks(pred, gt, k)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def hausdorff(pred, gt, k: int, percentile: Optional[float] = None) -> HausdorffResult:
    """Symmetric Hausdorff distance between the class-``k`` masks in pixel units.

    ``percentile`` (e.g. 95) replaces each directed maximum by that percentile.
    """
    p, g = _masks(pred, gt, k)
    np_, ng = p.any(), g.any()
    if not np_ and not ng:
        return HausdorffResult(0.0, False)
    if np_ != ng:
        h, w = p.shape
        return HausdorffResult(math.hypot(h - 1, w - 1), True)
    # distance from every pixel to the nearest pixel of the other mask
    to_g = ndimage.distance_transform_edt(~g)
    to_p = ndimage.distance_transform_edt(~p)
    d_pg, d_gp = to_g[p], to_p[g]
    if percentile is None:
        return HausdorffResult(float(max(d_pg.max(), d_gp.max())), False)
    return HausdorffResult(float(max(np.percentile(d_pg, percentile), np.percentile(d_gp, percentile))), False)


def select_eval_pixels(gt, pred, mode: str = "gt_foreground") -> np.ndarray:
    """Boolean (H, W) mask of pixels entering the calibration metrics."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise InvalidInputError(f"ground truth {gt.shape} and prediction {pred.shape} differ in shape")
    if mode == "gt_foreground":
        return gt != 0
    if mode == "union_foreground":
        return (gt != 0) | (pred != 0)
    if mode == "all_pixels":
        return np.ones(gt.shape, dtype=bool)
    raise InvalidInputError(f"unknown foreground mode {mode!r}; expected one of {FOREGROUND_MODES}")


def _selected(probs, gt, config: CalibConfig):
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt)
    if probs.ndim != 3 or probs.shape[1:] != gt.shape:
        raise InvalidInputError(f"probs {probs.shape} must be (K, H, W) matching labels {gt.shape}")
    pred = probs.argmax(axis=0)
    mask = select_eval_pixels(gt, pred, config.foreground_mode)
    if not mask.any():
        raise EmptyEvaluationError(f"no pixels selected in mode {config.foreground_mode!r}")
    return probs[:, mask].T, gt[mask], pred[mask]


def _binned(conf, hit, m):
    idx = assign_bins(conf, m)
    count = np.bincount(idx, minlength=m)
    s_acc = np.bincount(idx, weights=hit.astype(np.float64), minlength=m)
    s_conf = np.bincount(idx, weights=conf, minlength=m)
    safe = np.maximum(count, 1)
    return count, np.where(count > 0, s_acc / safe, 0.0), np.where(count > 0, s_conf / safe, 0.0)


def ece(probs, gt, config: CalibConfig = CalibConfig()):
    """Expected calibration error over the selected pixels; returns ``(ece, BinStats)``."""
    p, y, pred = _selected(probs, gt, config)
    conf = p.max(axis=1)
    count, acc, cf = _binned(conf, pred == y, config.bins)
    stats = BinStats(bin_edges(config.bins), count, acc, cf)
    return stats.ece(), stats


def cece(probs, gt, config: CalibConfig = CalibConfig()):
    """Class-wise ECE: every class probability of every selected pixel is binned.

    Normalised by the number of selected pixels, so the value lies in [0, 2].
    """
    p, y, pred = _selected(probs, gt, config)
    m, k = config.bins, p.shape[1]
    count, acc, cf = _binned(p.max(axis=1), pred == y, m)
    stats = BinStats(bin_edges(m), count, acc, cf,
                     np.zeros((m, k), dtype=np.int64), np.zeros((m, k)), np.zeros((m, k)))
    for j in range(k):
        cj, aj, fj = _binned(p[:, j], y == j, m)
        stats.class_count[:, j] = cj
        stats.class_accuracy[:, j] = aj
        stats.class_confidence[:, j] = fj
    return stats.cece(), stats


def write_reliability_csv(stats: BinStats, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "accuracy", "confidence"])
        for lo, hi, c, a, f in stats.rows():
            w.writerow([repr(lo), repr(hi), c, repr(a), repr(f)])


def merge_bin_stats(stats: Sequence[BinStats]) -> BinStats:
    """Pool max-confidence bins of several images into one diagram."""
    edges = stats[0].edges
    count = sum(s.count for s in stats)
    safe = np.maximum(count, 1)
    acc = sum(s.accuracy * s.count for s in stats)
    cf = sum(s.confidence * s.count for s in stats)
    return BinStats(edges, count, np.where(count > 0, acc / safe, 0.0), np.where(count > 0, cf / safe, 0.0))


@dataclass
class MetricsRecord:
    method: str
    run: str = ""
    dataset: str = "synthetic"
    dsc: List[float] = field(default_factory=list)     # per foreground class
    hd: List[float] = field(default_factory=list)
    dsc_mean: float = 0.0
    hd_mean: float = 0.0
    hd_degenerate: int = 0
    ece: Dict[str, float] = field(default_factory=dict)   # keyed by foreground mode
    cece: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method, "run": self.run, "dataset": self.dataset,
            "dsc": list(self.dsc), "dsc_mean": self.dsc_mean,
            "hd": list(self.hd), "hd_mean": self.hd_mean, "hd_degenerate": self.hd_degenerate,
            "ece": dict(self.ece), "cece": dict(self.cece),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def flat(self, modes: Sequence[str] = ("gt_foreground", "union_foreground")) -> Dict[str, float]:
        out = {"dsc": self.dsc_mean, "hd": self.hd_mean}
        for mode in modes:
            out[f"ece_{mode}"] = self.ece[mode]
            out[f"cece_{mode}"] = self.cece[mode]
        return out


def evaluate(probs_list, gts, modes=("gt_foreground", "union_foreground"), bins: int = 15,
             method: str = "", run: str = ""):
    """Average per-image metrics over a test set.

    Returns ``(record, pooled, per_image)`` where ``pooled`` maps each mode to
    the max-confidence :class:`BinStats` pooled across images and
    ``per_image`` lists one flat metric dict per image. Images with an empty
    evaluation set are skipped for that mode's calibration metrics.
    """
    k = np.asarray(probs_list[0]).shape[0]
    fg = range(1, k)
    dsc = np.zeros(k - 1)
    hd = np.zeros(k - 1)
    degenerate = 0
    cal = {m: {"ece": [], "cece": [], "stats": []} for m in modes}
    per_image = []
    for probs, gt in zip(probs_list, gts):
        pred = np.asarray(probs).argmax(axis=0)
        d_img = np.array([dice(pred, gt, c) for c in fg])
        h_img = [hausdorff(pred, gt, c) for c in fg]
        dsc += d_img
        hd += [h.distance for h in h_img]
        degenerate += sum(h.degenerate for h in h_img)
        row = {"dsc": float(d_img.mean()), "hd": float(np.mean([h.distance for h in h_img]))}
        for mode in modes:
            cfg = CalibConfig(bins, mode)
            try:
                e, stats = ece(probs, gt, cfg)
                ce_, _ = cece(probs, gt, cfg)
            except EmptyEvaluationError:
                continue
            cal[mode]["ece"].append(e)
            cal[mode]["cece"].append(ce_)
            cal[mode]["stats"].append(stats)
            row[f"ece_{mode}"] = e
            row[f"cece_{mode}"] = ce_
        per_image.append(row)
    n = len(gts)
    dsc /= n
    hd /= n
    rec = MetricsRecord(method=method, run=run, dsc=[float(v) for v in dsc], hd=[float(v) for v in hd],
                        dsc_mean=float(dsc.mean()), hd_mean=float(hd.mean()), hd_degenerate=int(degenerate))
    pooled = {}
    for mode in modes:
        vals = cal[mode]
        rec.ece[mode] = float(np.mean(vals["ece"])) if vals["ece"] else float("nan")
        rec.cece[mode] = float(np.mean(vals["cece"])) if vals["cece"] else float("nan")
        pooled[mode] = merge_bin_stats(vals["stats"]) if vals["stats"] else None
    return rec, pooled, per_image


def _rank(values: Sequence[float], direction: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return rankdata(-v if direction > 0 else v, method="average")


def _check_metrics(table: Mapping[str, Mapping[str, float]], metrics: Sequence[str]):
    for method, row in table.items():
        missing = [m for m in metrics if m not in row]
        if missing:
            raise InvalidInputError(f"method {method!r} is missing metrics {missing}")


def _direction(metric: str, directions: Mapping[str, int]) -> int:
    if metric in directions:
        return directions[metric]
    return directions[metric.split("_")[0]]


def sum_rank(table: Mapping[str, Mapping[str, float]], metrics: Optional[Sequence[str]] = None,
             directions: Mapping[str, int] = METRIC_DIRECTIONS) -> Dict[str, float]:
    """Rank methods per metric (1 is best, ties share the mean rank) and sum the ranks."""
    methods = list(table)
    if not methods:
        return {}
    metrics = list(metrics if metrics is not None else next(iter(table.values())))
    _check_metrics(table, metrics)
    total = np.zeros(len(methods))
    for metric in metrics:
        total += _rank([table[m][metric] for m in methods], _direction(metric, directions))
    return {m: float(t) for m, t in zip(methods, total)}


def mean_case_rank(cases: Mapping[str, Sequence[Mapping[str, float]]], metrics: Sequence[str],
                   directions: Mapping[str, int] = METRIC_DIRECTIONS) -> Dict[str, float]:
    """Rank methods per case and metric, then average the ranks per method.

    ``cases[method][i]`` holds the metric values of test case ``i``; every
    method must cover the same cases.
    """
    methods = list(cases)
    if not methods:
        return {}
    ncase = {len(v) for v in cases.values()}
    if len(ncase) != 1:
        raise InvalidInputError("every method must be evaluated on the same cases")
    n = ncase.pop()
    acc = np.zeros(len(methods))
    used = 0
    for i in range(n):
        for metric in metrics:
            vals = [cases[m][i].get(metric) for m in methods]
            if any(v is None or not np.isfinite(v) for v in vals):
                continue
            acc += _rank(vals, _direction(metric, directions))
            used += 1
    if used == 0:
        return {m: float("nan") for m in methods}
    return {m: float(a / used) for m, a in zip(methods, acc)}
