"""Synthetic multi-class shape segmentation data.

Each image holds 1-3 non-overlapping shapes on a background. Foreground class
``c`` is drawn as a disk, rectangle or annulus (``(c - 1) % 3``) with its own
base intensity. Labels may be drawn from a slightly perturbed copy of each
shape's geometry to mimic annotation noise at boundaries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from .numerics import InvalidInputError

SHAPES = ("disk", "rectangle", "annulus")
MAX_TRIES = 100
MAX_RESTARTS = 20


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    classes: int = 4
    noise: float = 0.15
    jitter: int = 1
    seed: int = 0
    min_shapes: int = 1
    max_shapes: int = 3

    def __post_init__(self):
        if self.classes < 2:
            raise InvalidInputError("need at least 2 classes (background + one shape)")
        if self.height < 16 or self.width < 16:
            raise InvalidInputError("images must be at least 16x16")
        if not np.isfinite(self.noise) or self.noise < 0:
            raise InvalidInputError(f"noise must be nonnegative, got {self.noise}")
        if int(self.jitter) != self.jitter or self.jitter < 0:
            raise InvalidInputError(f"jitter must be a nonnegative integer, got {self.jitter}")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise InvalidInputError("need 1 <= min_shapes <= max_shapes")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown synth fields: {sorted(unknown)}")
        return cls(**d)


def class_intensity(c: int, classes: int) -> float:
    if c == 0:
        return 0.2
    return 0.45 + 0.4 * (c - 1) / max(classes - 2, 1)


def _shape_mask(kind, cy, cx, size, h, w, grow=0):
    rr, cc = np.mgrid[0:h, 0:w]
    if kind == "disk":
        r = size + grow
        return (rr - cy) ** 2 + (cc - cx) ** 2 <= r * r
    if kind == "rectangle":
        hy, hx = size[0] + grow, size[1] + grow
        return (np.abs(rr - cy) <= hy) & (np.abs(cc - cx) <= hx)
    outer, inner = size
    d2 = (rr - cy) ** 2 + (cc - cx) ** 2
    return (d2 <= (outer + grow) ** 2) & (d2 >= max(inner - grow, 0) ** 2)


def _extent(kind, size):
    if kind == "rectangle":
        return size
    r = size if kind == "disk" else size[0]
    return r, r


def _draw_size(kind, rng, scale):
    def draw(lo, hi):
        return max(1, int(round(rng.integers(lo, hi) * scale)))
    if kind == "disk":
        return draw(4, 11)
    if kind == "rectangle":
        return draw(3, 9), draw(3, 9)
    outer = max(draw(6, 12), 2)
    return outer, max(outer - draw(3, 6), 0)


def _try_image(config, rng):
    h, w, k, j = config.height, config.width, config.classes, config.jitter
    pad = 2 * j + 1  # label shift + growth stay inside the box
    n = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    placed = []  # (y0, y1, x0, x1) boxes including the jitter margin
    image = np.full((h, w), class_intensity(0, k))
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(n):
        cls = int(rng.integers(1, k))
        kind = SHAPES[(cls - 1) % len(SHAPES)]
        for _ in range(MAX_TRIES):
            size = _draw_size(kind, rng, min(h, w) / 64.0)
            ey, ex = _extent(kind, size)
            if 2 * (ey + pad) >= h or 2 * (ex + pad) >= w:
                continue
            cy = int(rng.integers(ey + pad, h - ey - pad))
            cx = int(rng.integers(ex + pad, w - ex - pad))
            box = (cy - ey - pad, cy + ey + pad, cx - ex - pad, cx + ex + pad)
            if all(box[1] < b[0] or box[0] > b[1] or box[3] < b[2] or box[2] > b[3] for b in placed):
                break
        else:
            return None
        placed.append(box)
        mask = _shape_mask(kind, cy, cx, size, h, w)
        image[mask] = class_intensity(cls, k)
        if j > 0:
            dy, dx, grow = (int(v) for v in rng.integers(-j, j + 1, size=3))
            lmask = _shape_mask(kind, cy + dy, cx + dx, size, h, w, grow)
        else:
            lmask = mask
        labels[lmask] = cls
    if config.noise > 0:
        image = image + rng.normal(0.0, config.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0), labels


def generate_image(config: SynthConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """One (image, labels) pair; images are in [0, 1], labels in [0, classes)."""
    for _ in range(MAX_RESTARTS):
        out = _try_image(config, rng)
        if out is not None:
            return out
    raise GenerationError(
        f"could not place shapes in a {config.height}x{config.width} image after {MAX_RESTARTS} restarts")


def generate_dataset(config: SynthConfig, n: int, stream: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """``n`` (image, labels) pairs; deterministic in ``(config.seed, stream)``."""
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    rng = np.random.default_rng([config.seed, stream])
    return [generate_image(config, rng) for _ in range(n)]
