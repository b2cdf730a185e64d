"""Seedable, platform-independent random draws.

The bit source is numpy's Philox-4x64 counter-based generator keyed through a
SeedSequence built from ``(seed, *stream)``. Index permutations do not go through
numpy's higher-level samplers; they use the draw order below so the output only
depends on the raw 64-bit stream:

    for i in 0 .. k-1:
        j = i + below(n - i)        # rejection-sampled, unbiased
        swap(a[i], a[j])
    return a[:k]

with ``below(m)`` drawing 64-bit words until one is under ``m * floor(2**64 / m)``
and returning it modulo ``m``.
"""

from __future__ import annotations

import zlib

import numpy as np

RNG_NAME = "philox4x64/fisher-yates/v1"
_BLOCK = 4096
_TWO64 = 1 << 64


def _stream_words(stream) -> list[int]:
    words = []
    for s in stream:
        if isinstance(s, str):
            words.append(zlib.crc32(s.encode("utf-8")))
        else:
            v = int(s)
            if v < 0:
                raise ValueError("stream keys must be non-negative")
            words.append(v)
    return words


def seed_sequence(seed: int, *stream) -> np.random.SeedSequence:
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence([seed, *_stream_words(stream)])


class CounterRNG:
    """Raw 64-bit draws plus the documented bounded-integer and shuffle routines."""

    def __init__(self, seed: int, *stream):
        self._bits = np.random.Philox(seed_sequence(seed, *stream))
        self._buf: list[int] = []
        self._pos = 0

    def next_u64(self) -> int:
        if self._pos == len(self._buf):
            self._buf = self._bits.random_raw(_BLOCK).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def below(self, m: int) -> int:
        if m <= 0:
            raise ValueError("bound must be positive")
        limit = (_TWO64 // m) * m
        while True:
            x = self.next_u64()
            if x < limit:
                return x % m

    def sample_indices(self, n: int, k: int) -> list[int]:
        """``k`` distinct indices from ``range(n)`` via partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        a = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            a[i], a[j] = a[j], a[i]
        return a[:k]

    def permutation(self, n: int) -> list[int]:
        return self.sample_indices(n, n)


def numpy_generator(seed: int, *stream) -> np.random.Generator:
    """A numpy Generator on its own Philox stream, for floating-point draws."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *stream)))
