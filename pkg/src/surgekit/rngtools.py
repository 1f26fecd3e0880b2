"""Counter-based random substreams.

Every stochastic routine in the package draws from a Philox generator keyed
by a hash of (master seed, path components).  Streams for distinct paths are
statistically independent and do not depend on the order in which they are
created, so per-event / per-draw / per-tree work can run in any order (or in
parallel) without changing results.
"""

import hashlib

import numpy as np


def stream_key(seed, *path):
    """256-bit Philox key derived from a master seed and a path of labels."""
    parts = [str(int(seed))]
    for p in path:
        if isinstance(p, (int, np.integer)):
            parts.append(f"i{int(p)}")
        elif isinstance(p, str):
            parts.append(f"s{p}")
        else:
            raise TypeError(f"substream path components must be int or str, got {type(p)!r}")
    digest = hashlib.sha256("/".join(parts).encode("utf-8")).digest()
    # Philox-4x64 keys are 128-bit: take the first half of the digest
    return np.frombuffer(digest[:16], dtype=np.uint64)


def substream(seed, *path):
    """Independent ``numpy.random.Generator`` for (seed, *path)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
