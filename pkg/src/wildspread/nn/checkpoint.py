"""Versioned binary weight checkpoints.

Layout (little-endian)::

    magic    4s   b"WSCK"
    version  u32
    flags    u32  bit 0: Adam state present
    desc_len u32
    desc     desc_len bytes of UTF-8 JSON (layer descriptors, input shape, dtype, seed)
    params   float64 payload of every parameter tensor, in model order
    [adam]   t (u64), lr, beta1, beta2, eps (f64), then m and v payloads in model order
    crc32    u32 over everything before it

A JSON sidecar ``<path>.json`` summarizes architecture, seed and checksum.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from .adam import AdamState
from .model import LayerParams, Model

MAGIC = b"WSCK"
VERSION = 1
_HEAD = struct.Struct("<4sIII")
_ADAM = struct.Struct("<Qdddd")


class CheckpointError(ValueError):
    pass


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def model_checksum(model: Model) -> str:
    """CRC32 (hex) of the float64 parameter payload."""
    crc = 0
    for p in model.parameters():
        crc = zlib.crc32(_f64(p), crc)
    return f"{crc:08x}"


def save_checkpoint(model: Model, path, adam: Optional[AdamState] = None, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    desc = model.describe()
    desc["format_version"] = VERSION
    body = bytearray()
    djson = json.dumps(desc, sort_keys=True).encode()
    body += _HEAD.pack(MAGIC, VERSION, 1 if adam is not None else 0, len(djson))
    body += djson
    for p in model.parameters():
        body += _f64(p)
    if adam is not None:
        body += _ADAM.pack(adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps)
        for a in adam.m + adam.v:
            body += _f64(a)
    body += struct.pack("<I", zlib.crc32(body))

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(body))
    os.replace(tmp, path)

    sidecar = {
        "architecture": [list(r) for r in model.architecture()],
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "dtype": model.dtype.str,
        "n_params": model.n_params,
        "format_version": VERSION,
        "has_adam_state": adam is not None,
        "adam_step": adam.t if adam is not None else None,
        "param_checksum": model_checksum(model),
    }
    if extra:
        sidecar.update(extra)
    side = path.with_name(path.name + ".json")
    tmp = side.with_name(side.name + ".tmp")
    tmp.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, side)
    return path


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, shape, dtype) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(dtype)


def load_checkpoint(path, with_adam: bool = False):
    """Load a checkpoint; with ``with_adam`` also return its Adam state (or None)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEAD.size + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, flags, dlen = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {VERSION}")
    (stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted or truncated)")

    r = _Reader(data[:-4], path)
    r.take(_HEAD.size)
    try:
        desc = json.loads(r.take(dlen))
    except ValueError as exc:
        raise CheckpointError(f"{path}: bad descriptor block: {exc}") from None
    dtype = np.dtype(desc["dtype"])
    layers = []
    for d in desc["layers"]:
        if "weight_shape" in d:
            w = r.array(tuple(d["weight_shape"]), dtype)
            b = r.array((d["weight_shape"][-1],), dtype)
            layers.append(LayerParams(d["kind"], d["activation"], w, b, d["name"]))
        else:
            layers.append(LayerParams(d["kind"], d["activation"], name=d["name"]))
    model = Model(layers, tuple(desc["input_shape"]), desc["seed"], dtype)

    adam = None
    if flags & 1:
        t, lr, b1, b2, eps = _ADAM.unpack(r.take(_ADAM.size))
        params = model.parameters()
        m = [r.array(p.shape, dtype) for p in params]
        v = [r.array(p.shape, dtype) for p in params]
        adam = AdamState(m, v, t, lr, b1, b2, eps)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    if with_adam:
        return model, adam
    return model


def load_for_resume(path):
    """Model and Adam state for continued training; refuses inference-only files."""
    model, adam = load_checkpoint(path, with_adam=True)
    if adam is None:
        raise CheckpointError(f"{path}: no optimizer state stored; usable for inference only")
    return model, adam
