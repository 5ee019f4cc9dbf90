"""Named, splittable random streams.

Every random draw in the package comes from ``stream(seed, *labels)``: a
PCG64 generator whose SeedSequence entropy is the seed plus the labels
(strings are folded to 32-bit ints with CRC-32). Two streams with different
labels are statistically independent, and the same labels always give the
same stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(label: int | str) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode())
    if label < 0:
        raise ValueError("stream labels must be non-negative")
    return int(label)


def stream(seed: int, *labels: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([_word(seed), *map(_word, labels)])))


def derive_seed(seed: int, *labels: int | str) -> int:
    """A 64-bit child seed, for handing to code that wants a plain integer."""
    return int(stream(seed, *labels).integers(0, 2**63))
