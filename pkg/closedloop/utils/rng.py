"""
Seeded random streams.

Every stream is a counter-based Philox generator keyed by a
:class:`numpy.random.SeedSequence` built from the run seed plus stream labels,
so streams are independent, reproducible across platforms and free of global
state.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(label: str) -> int:
    """A stable non-negative integer for a text label (CRC-32 of its UTF-8 bytes)."""
    return zlib.crc32(label.encode("utf-8"))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    The generator for ``seed`` and an optional tuple of non-negative stream labels.

    Equal arguments always produce the same sequence of draws.
    """
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, *(s & 0xFFFFFFFFFFFFFFFF for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
