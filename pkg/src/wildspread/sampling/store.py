"""Uncompressed zip sample store.

Layout
------
``manifest.json``
    schema, patch size, channel count, seed, split fractions and per-split class
    counts.
``<split>/<label>/<fire_id>_<t0>_<row>_<col>.bin``
    one binary-scheme sample; the label is recoverable from the path alone.
    Dihedral variants append ``_d<k>`` before the extension.
``<same name>.mask.bin``
    the n x n next-day mask of a mask-scheme sample.

Every payload is a 16-byte header (magic ``WSP1``, n, C, reserved; little-endian
uint32) followed by little-endian float32 values, channel-major then row-major.
All entries are STORED with a fixed timestamp, so equal inputs give equal bytes.
"""

from __future__ import annotations

import json
import math
import os
import struct
import zipfile
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from ..geo import format_timestamp
from .rng import RNG_NAME, CounterRNG
from .samples import MaskSample, Sample

MAGIC = b"WSP1"
HEADER = struct.Struct("<4sIII")
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
STORE_FORMAT = "wildspread-sample-store"


class StoreError(ValueError):
    pass


def encode_patch(patch: np.ndarray) -> bytes:
    """(n, n, C) array to header + CHW float32 payload."""
    n, n2, C = patch.shape
    if n != n2:
        raise StoreError(f"patch must be square, got {patch.shape}")
    body = np.ascontiguousarray(np.transpose(patch, (2, 0, 1)), dtype="<f4").tobytes()
    return HEADER.pack(MAGIC, n, C, 0) + body


def decode_patch(payload: bytes) -> np.ndarray:
    if len(payload) < HEADER.size:
        raise StoreError("payload shorter than its header")
    magic, n, C, _ = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise StoreError(f"bad payload magic {magic!r}")
    expected = HEADER.size + 4 * n * n * C
    if len(payload) != expected:
        raise StoreError(f"payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4", offset=HEADER.size).reshape(C, n, n)
    return arr.transpose(1, 2, 0).astype(np.float32)


def entry_name(sample: Sample, split: str) -> str:
    if "/" in sample.fire_id or "_" in sample.fire_id:
        raise StoreError(f"fire_id {sample.fire_id!r} may not contain '/' or '_'")
    col, row = sample.poi
    suffix = f"_d{sample.variant}" if sample.variant else ""
    return f"{split}/{sample.label}/{sample.fire_id}_{format_timestamp(sample.t0)}_{row}_{col}{suffix}.bin"


def label_from_name(name: str) -> int:
    """Label encoded in an entry path, e.g. ``train/1/king_...bin`` -> 1."""
    parts = name.split("/")
    if len(parts) != 3 or parts[1] not in ("0", "1"):
        raise StoreError(f"not a sample entry name: {name!r}")
    return int(parts[1])


def split_sizes(total: int, fractions: Sequence[float]) -> list[int]:
    """Floor every split after the first; the remainder goes to the first (train)."""
    rest = [math.floor(f * total + 1e-9) for f in fractions[1:]]
    return [total - sum(rest)] + rest


def _check_fractions(fractions):
    if len(fractions) != len(SPLITS):
        raise StoreError(f"need {len(SPLITS)} split fractions (train, val, test), got {len(fractions)}")
    if any(not (f > 0) for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise StoreError(f"split fractions must be positive and sum to 1, got {tuple(fractions)}")


def _zinfo(name: str) -> zipfile.ZipInfo:
    zi = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    zi.compress_type = zipfile.ZIP_STORED
    zi.external_attr = 0o644 << 16
    zi.create_system = 3
    return zi


def write_store(
    samples: Sequence[Sample],
    path,
    seed: int,
    split_fractions=DEFAULT_FRACTIONS,
    schema=None,
    extra: Optional[dict] = None,
) -> "SampleStore":
    """Write samples to a STORED zip, assigning splits by seeded shuffle + partition."""
    _check_fractions(split_fractions)
    samples = list(samples)
    if not samples:
        raise StoreError("no samples to write")
    n = samples[0].n
    C = samples[0].patch.shape[2]
    if any(s.patch.shape != (n, n, C) for s in samples):
        raise StoreError("samples have inconsistent patch shapes")
    is_mask = isinstance(samples[0], MaskSample)

    order = CounterRNG(seed, "split").permutation(len(samples))
    sizes = split_sizes(len(samples), split_fractions)
    assignment = {}
    pos = 0
    for split, size in zip(SPLITS, sizes):
        for k in order[pos:pos + size]:
            assignment[k] = split
        pos += size

    entries = {}
    counts = {s: {"0": 0, "1": 0} for s in SPLITS}
    for k, s in enumerate(samples):
        split = assignment[k]
        name = entry_name(s, split)
        if name in entries:
            raise StoreError(f"duplicate entry path {name!r}")
        entries[name] = k
        counts[split][str(s.label)] += 1

    manifest = {
        "format": STORE_FORMAT,
        "version": 1,
        "scheme": "mask" if is_mask else "binary",
        "n": n,
        "channels": C,
        "schema": schema.to_list() if schema is not None else None,
        "seed": int(seed),
        "rng": RNG_NAME,
        "split_fractions": list(split_fractions),
        "counts": counts,
        "splits": {s: sum(c.values()) for s, c in counts.items()},
        "fire_ids": sorted({s.fire_id for s in samples}),
        "payload": {"dtype": "<f4", "layout": "CHW", "header_bytes": HEADER.size, "magic": MAGIC.decode()},
    }
    if extra:
        manifest.update(extra)

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(_zinfo("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(entries, key=lambda nm: (SPLITS.index(nm.split("/")[0]), nm)):
            s = samples[entries[name]]
            zf.writestr(_zinfo(name), encode_patch(s.patch))
            if is_mask:
                mask_name = name[: -len(".bin")] + ".mask.bin"
                zf.writestr(_zinfo(mask_name), encode_patch(s.label_mask[:, :, None]))
    os.replace(tmp, path)
    return SampleStore(path)


class SampleStore:
    """Read access to a store written by :func:`write_store`."""

    def __init__(self, path):
        self.path = Path(path)
        self._zf = zipfile.ZipFile(self.path, "r")
        try:
            self.manifest = json.loads(self._zf.read("manifest.json"))
        except KeyError:
            raise StoreError(f"{self.path}: no manifest.json") from None
        if self.manifest.get("format") != STORE_FORMAT:
            raise StoreError(f"{self.path}: not a sample store")
        for info in self._zf.infolist():
            if info.compress_type != zipfile.ZIP_STORED:
                raise StoreError(f"{self.path}: entry {info.filename} is compressed")
        self._split_names: dict = {s: [] for s in SPLITS}
        for name in self._zf.namelist():
            if name == "manifest.json" or name.endswith(".mask.bin"):
                continue
            split = name.split("/", 1)[0]
            self._split_names.setdefault(split, []).append(name)
        for names in self._split_names.values():
            names.sort()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._zf.close()

    @property
    def n(self) -> int:
        return self.manifest["n"]

    @property
    def channels(self) -> int:
        return self.manifest["channels"]

    @property
    def schema_list(self):
        return self.manifest.get("schema")

    @property
    def splits(self) -> list[str]:
        return [s for s, names in self._split_names.items() if names]

    def names(self, split: str) -> list[str]:
        if split not in self._split_names or not self._split_names[split]:
            raise StoreError(f"{self.path}: unknown or empty split {split!r}")
        return list(self._split_names[split])

    def read_patch(self, name: str) -> np.ndarray:
        return decode_patch(self._zf.read(name))

    def read_mask(self, name: str) -> np.ndarray:
        return decode_patch(self._zf.read(name[: -len(".bin")] + ".mask.bin"))[:, :, 0]

    def read_batch(self, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        patches = np.empty((len(names), self.n, self.n, self.channels), dtype=np.float32)
        for k, name in enumerate(names):
            patches[k] = self.read_patch(name)
        labels = np.array([label_from_name(nm) for nm in names], dtype=np.float32)
        return patches, labels


def iterate_store(
    store,
    split: str,
    batch_size: int,
    epoch_seed: Optional[int] = None,
    with_names: bool = False,
) -> Iterator[tuple]:
    """Yield (patches, labels) batches covering the split exactly once.

    Entries are visited in sorted-name order, permuted by ``epoch_seed`` when given.
    The final batch may be short.
    """
    if not isinstance(store, SampleStore):
        store = SampleStore(store)
    if batch_size < 1:
        raise StoreError("batch_size must be at least 1")
    names = store.names(split)
    if epoch_seed is not None:
        perm = CounterRNG(epoch_seed, "epoch").permutation(len(names))
        names = [names[i] for i in perm]
    for start in range(0, len(names), batch_size):
        chunk = names[start:start + batch_size]
        patches, labels = store.read_batch(chunk)
        if with_names:
            yield patches, labels, chunk
        else:
            yield patches, labels
