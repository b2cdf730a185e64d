"""Points of interest drawn from consecutive stack pairs.

Every pixel of the day-t stack is a candidate center; ``count`` of them are drawn
without replacement, each yielding its zero-padded neighbourhood at t and the
fire state of the same pixel in the next stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Optional

import numpy as np

from .patches import PATCH_SIZE, PatchError, extract_mask, pad_channels, patches_from_padded
from .rng import CounterRNG


class SamplingError(ValueError):
    pass


@dataclass
class Sample:
    patch: np.ndarray  # (n, n, C) float32
    label: int
    poi: tuple  # (col, row)
    fire_id: str
    t0: datetime
    t1: datetime
    variant: int = 0  # dihedral element applied, 0 = identity

    @property
    def n(self) -> int:
        return self.patch.shape[0]


@dataclass
class MaskSample(Sample):
    label_mask: np.ndarray = field(default=None)  # (n, n) 0/1 at t1


def _check_pair(stack_t, stack_next):
    if stack_t.spec != stack_next.spec:
        raise SamplingError("stack pair is on different grids")
    if stack_t.schema != stack_next.schema:
        raise SamplingError("stack pair has different schemas")
    if stack_next.timestamp - stack_t.timestamp < timedelta(hours=24):
        raise SamplingError("stacks of a pair must be at least 24h apart")


def draw_pois(height: int, width: int, count: int, seed: int, *stream) -> list[tuple]:
    """``count`` distinct (col, row) positions, row-major index order, seeded."""
    population = height * width
    if count > population:
        raise SamplingError(
            f"count {count} exceeds the pixel population {population} ({width}x{height})"
        )
    if count < 0:
        raise SamplingError("count must be non-negative")
    idx = CounterRNG(seed, "poi", *stream).sample_indices(population, count)
    return [(i % width, i // width) for i in idx]


def _cap_majority(items, labels, cap):
    labels = np.asarray(labels)
    pos = int(labels.sum())
    neg = len(labels) - pos
    minority_label = 1 if pos <= neg else 0
    keep_major = math.ceil(cap * min(pos, neg))
    out, taken = [], 0
    for item, lab in zip(items, labels):
        if lab == minority_label:
            out.append(item)
        elif taken < keep_major:
            out.append(item)
            taken += 1
    return out


def sample_pois(
    stack_t,
    stack_next,
    count: int,
    seed: int,
    fire_id: str = "fire",
    n: int = PATCH_SIZE,
    augment: bool = False,
    majority_cap: Optional[float] = None,
) -> list[Sample]:
    """Binary-scheme samples for one consecutive stack pair.

    ``majority_cap`` (off by default) keeps at most ``cap`` majority-class samples
    per minority-class sample, in draw order. ``augment`` adds the seven
    non-identity dihedral variants of every patch.
    """
    _check_pair(stack_t, stack_next)
    if n < 1 or n % 2 == 0:
        raise PatchError(f"patch size must be odd and positive, got {n}")
    H, W = stack_t.spec.height, stack_t.spec.width
    pois = draw_pois(H, W, count, seed, int(stack_t.timestamp.timestamp()))
    nxt = stack_next.fire_mask
    labels = [int(nxt[row, col]) for col, row in pois]
    if majority_cap is not None:
        kept = _cap_majority(list(zip(pois, labels)), labels, majority_cap)
        pois = [p for p, _ in kept]
        labels = [lab for _, lab in kept]

    padded = pad_channels(stack_t.data, n)
    patches = patches_from_padded(padded, pois, n).astype(np.float32)
    samples = [
        Sample(patches[k], labels[k], pois[k], fire_id, stack_t.timestamp, stack_next.timestamp)
        for k in range(len(pois))
    ]
    if augment:
        samples = [
            v
            for s in samples
            for v in dihedral_variants(s, stack_t.schema, in_bounds_mask(s.poi, n, H, W))
        ]
    return samples


def sample_mask_scheme(
    stack_t, stack_next, count: int, n: int, seed: int, fire_id: str = "fire"
) -> list[MaskSample]:
    """Like :func:`sample_pois` but each label is the n x n next-day mask window."""
    base = sample_pois(stack_t, stack_next, count, seed, fire_id=fire_id, n=n)
    nxt = stack_next.fire_mask
    return [
        MaskSample(
            s.patch, s.label, s.poi, s.fire_id, s.t0, s.t1,
            label_mask=extract_mask(nxt, s.poi, n).astype(np.float32),
        )
        for s in base
    ]


# --- dihedral augmentation --------------------------------------------------


def dihedral(patch: np.ndarray, k: int) -> np.ndarray:
    """Element k of the 8-element dihedral group on the two spatial axes.

    k % 4 counter-clockwise quarter turns (north up), then a west-east mirror
    when k >= 4.
    """
    out = np.rot90(patch, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def rotate_bearing(bearing: float, k: int) -> float:
    """Bearing (degrees clockwise from north) after :func:`dihedral` element k."""
    b = bearing - 90.0 * (k % 4)
    if k >= 4:
        b = -b
    return b % 360.0


def _adjust_wind(patch, schema, k, valid):
    """Rewrite wind-angle channels of a transformed patch on its in-bounds cells."""
    names = schema.names
    center = patch.shape[0] // 2
    if "wind_direction" in names:
        i = names.index("wind_direction")
        bearing = float(patch[center, center, i]) * 360.0
        patch[:, :, i] = np.where(valid, rotate_bearing(bearing, k) / 360.0, 0.0)
    if "wind_dir_sin" in names and "wind_dir_cos" in names:
        i, j = names.index("wind_dir_sin"), names.index("wind_dir_cos")
        bearing = math.degrees(math.atan2(float(patch[center, center, i]), float(patch[center, center, j])))
        nb = math.radians(rotate_bearing(bearing, k))
        patch[:, :, i] = np.where(valid, math.sin(nb), 0.0)
        patch[:, :, j] = np.where(valid, math.cos(nb), 0.0)
    return patch


def in_bounds_mask(poi, n: int, height: int, width: int) -> np.ndarray:
    """(n, n) True where the patch cell maps onto the grid."""
    col, row = poi
    r = n // 2
    rows = np.arange(row - r, row + r + 1)
    cols = np.arange(col - r, col + r + 1)
    return ((rows >= 0) & (rows < height))[:, None] & ((cols >= 0) & (cols < width))[None, :]


def dihedral_variants(sample: Sample, schema, valid: Optional[np.ndarray] = None) -> list[Sample]:
    """All 8 dihedral images of a sample (identity first); wind angles follow the turn.

    ``valid`` marks the patch cells that lie on the grid (all cells when omitted);
    wind-angle channels are rewritten there and stay zero in the padding.
    """
    if valid is None:
        valid = np.ones(sample.patch.shape[:2], dtype=bool)
    out = [sample]
    for k in range(1, 8):
        p = dihedral(sample.patch, k)
        p = _adjust_wind(p, schema, k, dihedral(valid, k))
        out.append(replace(sample, patch=p, variant=k))
    return out


def sample_archive(
    archive,
    count: int,
    seed: int,
    n: int = PATCH_SIZE,
    scheme: str = "binary",
    augment: bool = False,
    majority_cap: Optional[float] = None,
) -> list:
    """``count`` POIs from every consecutive stack pair of an archive."""
    out = []
    for a, b in archive.pairs():
        if scheme == "mask":
            out += sample_mask_scheme(a, b, count, n, seed, fire_id=archive.fire_id)
        elif scheme == "binary":
            out += sample_pois(a, b, count, seed, archive.fire_id, n, augment, majority_cap)
        else:
            raise SamplingError(f"unknown sampling scheme {scheme!r}")
    return out
