"""Named random substreams derived from one root seed."""

import zlib

import numpy as np

STREAMS = ("init", "subsample", "noise", "latent", "data", "rff", "eval")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; identical for identical ``(seed, name)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
