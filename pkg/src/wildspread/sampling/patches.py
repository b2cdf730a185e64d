"""Zero-padded neighbourhood extraction around points of interest."""

from __future__ import annotations

import numpy as np

PATCH_SIZE = 31


class PatchError(ValueError):
    pass


def _check(n, poi, height, width):
    if n < 1 or n % 2 == 0:
        raise PatchError(f"patch size must be odd and positive, got {n}")
    col, row = poi
    if not (0 <= col < width and 0 <= row < height):
        raise PatchError(f"POI {poi} outside {width}x{height} grid")


def pad_channels(data: np.ndarray, n: int) -> np.ndarray:
    """Zero-pad a (C, H, W) array by n // 2 on every side."""
    r = n // 2
    return np.pad(data, ((0, 0), (r, r), (r, r)))


def extract_patch(stack, poi, n: int = PATCH_SIZE) -> np.ndarray:
    """(n, n, C) window centered at ``poi = (col, row)``; cells off the grid are 0."""
    data = stack if isinstance(stack, np.ndarray) else stack.data
    C, H, W = data.shape
    _check(n, poi, H, W)
    col, row = poi
    r = n // 2
    out = np.zeros((n, n, C), dtype=data.dtype)
    r0, r1 = max(0, row - r), min(H, row + r + 1)
    c0, c1 = max(0, col - r), min(W, col + r + 1)
    out[r0 - (row - r):r1 - (row - r), c0 - (col - r):c1 - (col - r)] = (
        data[:, r0:r1, c0:c1].transpose(1, 2, 0)
    )
    return out


def patches_from_padded(padded: np.ndarray, pois, n: int) -> np.ndarray:
    """Batch of (n, n, C) patches from a pre-padded (C, H + n - 1, W + n - 1) array."""
    out = np.empty((len(pois), n, n, padded.shape[0]), dtype=padded.dtype)
    for k, (col, row) in enumerate(pois):
        out[k] = padded[:, row:row + n, col:col + n].transpose(1, 2, 0)
    return out


def extract_mask(mask: np.ndarray, poi, n: int) -> np.ndarray:
    """(n, n) zero-padded window of a 2-D mask."""
    H, W = mask.shape
    _check(n, poi, H, W)
    return extract_patch(mask[None], poi, n)[:, :, 0]
