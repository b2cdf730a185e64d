"""Dense next-day probability masks and autoregressive multi-day rollout."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geo import GridSpec, RasterGrid, format_timestamp, write_ascii_grid
from .nn import Model, model_forward_batch
from .nn.checkpoint import model_checksum
from .sampling import pad_channels

DEFAULT_THRESHOLD = 0.5
STEP = timedelta(hours=24)


class RolloutError(ValueError):
    pass


@dataclass
class PredictionMask:
    spec: GridSpec
    probabilities: np.ndarray  # (H, W) in [0, 1]
    timestamp: datetime  # time of the stack the prediction was made from
    horizon: int = 1  # steps ahead of the initial stack

    def __post_init__(self):
        if self.probabilities.shape != self.spec.shape:
            raise RolloutError(f"mask shape {self.probabilities.shape} != grid {self.spec.shape}")

    @property
    def target_time(self) -> datetime:
        return self.timestamp + STEP

    def binary(self, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
        return (self.probabilities >= threshold).astype(np.uint8)


def _row_patches(padded: np.ndarray, row: int, n: int, width: int) -> np.ndarray:
    """All ``width`` (n, n, C) patches centered on one row of the unpadded grid."""
    strip = padded[:, row:row + n, :]  # (C, n, W + n - 1)
    win = sliding_window_view(strip, n, axis=2)  # (C, n, W, n)
    return np.ascontiguousarray(win.transpose(2, 1, 3, 0))


def predict_dense(model: Model, stack) -> PredictionMask:
    """Probability for every pixel from its zero-padded neighbourhood.

    Patches are assembled one grid row at a time; each is scored independently
    of its batch, so the raster equals pixel-by-pixel prediction exactly.
    """
    n, _, C = model.input_shape
    if stack.schema.channel_count != C:
        raise RolloutError(f"stack has {stack.schema.channel_count} channels, model expects {C}")
    H, W = stack.spec.height, stack.spec.width
    padded = pad_channels(stack.data, n)
    probs = np.empty((H, W), dtype=np.float64)
    for r in range(H):
        probs[r] = model_forward_batch(model, _row_patches(padded, r, n, W), chunk=W)
    return PredictionMask(stack.spec, probs, stack.timestamp, 1)


def rollout(model: Model, stack0, steps: int, threshold: float = DEFAULT_THRESHOLD, union: bool = False) -> list:
    """``steps`` rounds of predict, threshold, and feed the mask back.

    Only the fire-mask channel changes between steps; every other channel is
    held at its ``stack0`` value. With ``union`` a pixel stays burning once
    burned. Returns ``[(PredictionMask, binary mask), ...]``.
    """
    if steps < 1:
        raise RolloutError("steps must be >= 1")
    out = []
    cur = stack0
    for k in range(steps):
        pm = predict_dense(model, cur)
        pm.timestamp = stack0.timestamp + k * STEP
        pm.horizon = k + 1
        binary = pm.binary(threshold)
        if union:
            binary = np.maximum(binary, cur.fire_mask.astype(np.uint8))
        out.append((pm, binary))
        cur = replace(cur.with_fire_mask(binary), timestamp=cur.timestamp + STEP)
    return out


# --- export ------------------------------------------------------------------


def pgm_bytes(probabilities: np.ndarray) -> bytes:
    """Binary 8-bit PGM; value = probability * 255 rounded half up."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, 1.0)
    v = np.floor(p * 255.0 + 0.5).astype(np.uint8)
    H, W = v.shape
    return f"P5\n{W} {H}\n255\n".encode("ascii") + v.tobytes()


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise RolloutError(f"{path}: not a binary PGM")
    W, H, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise RolloutError(f"{path}: maxval {maxval} unsupported")
    return np.frombuffer(parts[4][: W * H], dtype=np.uint8).reshape(H, W)


def export_mask(
    mask: PredictionMask,
    path,
    fmt: Optional[str] = None,
    threshold: float = DEFAULT_THRESHOLD,
    model: Optional[Model] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write a mask as ASCII grid (``asc``) or PGM (``pgm``) plus ``<path>.json``.

    The format defaults to the file extension.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt in ("asc", "ascii", "grid"):
        write_ascii_grid(RasterGrid(mask.spec, mask.probabilities), path)
    elif fmt == "pgm":
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(pgm_bytes(mask.probabilities))
        os.replace(tmp, path)
    else:
        raise RolloutError(f"unknown mask format {fmt!r} (use asc or pgm)")
    side = {
        "format": "pgm" if fmt == "pgm" else "ascii_grid",
        "source_timestamp": format_timestamp(mask.timestamp),
        "target_timestamp": format_timestamp(mask.target_time),
        "step": mask.horizon,
        "threshold": threshold,
        "grid": mask.spec.to_dict(),
        "model_checksum": model_checksum(model) if model is not None else None,
    }
    if extra:
        side.update(extra)
    sp = path.with_name(path.name + ".json")
    tmp = sp.with_name(sp.name + ".tmp")
    tmp.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, sp)
    return path
