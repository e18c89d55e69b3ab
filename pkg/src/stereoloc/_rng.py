"""Labeled random substreams derived from a single integer seed."""

import zlib

import numpy as np


def substream(seed, label, *extra):
    """Return a Generator for ``(seed, label, *extra)``.

    Different labels give statistically independent streams, so toggling one
    source of randomness (say augmentation) leaves the others untouched.
    """
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
