from __future__ import annotations

import zlib

import numpy as np


def _stream_key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def make_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Return a counter-based generator for a named sub-stream of the root seed.

    The same (seed, stream) pair always yields the same sequence, on every platform.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_stream_key(p) for p in stream))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *stream: int | str) -> int:
    """Derive a plain integer seed for a sub-stream (used for env resets and record keeping)."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_stream_key(p) for p in stream))
    return int(seq.generate_state(1, dtype=np.uint32)[0])
