"""Named, reproducible random substreams derived from one top-level seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Derive an independent generator for (seed, names...).

    Names are folded in through crc32 so the derivation is stable across
    processes and platforms (unlike the builtin salted hash()).
    """
    keys = [int(seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, str):
            keys.append(zlib.crc32(name.encode("utf-8")))
        else:
            keys.append(int(name) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))
