"""Binary checkpoints.

Layout (little-endian)::

    magic      4s   b"CSLB"
    version    u16  format version (1)
    reserved   u16  0
    arch_hash  8s   first 8 bytes of sha256 over the layer shapes
    classes    u32  K
    height     u32  training image height
    width      u32  training image width
    count      u64  number of float64 parameters that follow
    params     count * f64, layers in order w1 b1 w2 b2 w3 b3, row-major
"""

from __future__ import annotations

import struct
from typing import Tuple

import numpy as np

from .model import ModelParams, init_params

MAGIC = b"CSLB"
VERSION = 1
_HEADER = struct.Struct("<4sHH8sIIIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, height: int, width: int) -> None:
    flat = params.flatten().astype("<f8")
    header = _HEADER.pack(MAGIC, VERSION, 0, params.arch_hash(), params.num_classes, height, width, flat.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flat.tobytes())


def load_checkpoint(path, in_channels: int = 1, width: int = 16) -> Tuple[ModelParams, Tuple[int, int]]:
    """Return ``(params, (height, width))``; the architecture hash must match."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, _, arch, k, h, w, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    template = init_params(k, in_channels, width)
    if template.arch_hash() != arch:
        raise CheckpointError("architecture hash mismatch")
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise CheckpointError(f"expected {count} parameters, found {len(body) / 8:g}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return template.unflatten(flat), (h, w)
