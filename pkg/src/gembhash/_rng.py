from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("split", "kmeans", "itq", "lsh", "synth")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of one master seed.

    Streams with different names (or different ``extra`` keys, e.g. restart
    number) never share state, so adding a draw in one stage cannot shift
    the numbers another stage sees.
    """
    key = (zlib.crc32(name.encode("ascii")),) + tuple(int(e) for e in extra)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.default_rng(seq)
