"""Counter-based seeded random streams.

Every random draw in the toolkit comes from a substream addressed by
``(seed, *keys)``: Monte-Carlo chunk index, temporal bin, sweep level, frame
index. Substreams are Philox generators keyed through ``SeedSequence`` so the
draws of one key never depend on how many other keys exist or on the order in
which workers evaluate them.
"""
from __future__ import annotations

import numpy as np

# Fixed chunk size for partitioned Monte-Carlo sampling. Changing it changes
# every estimate, so it is a module constant rather than a parameter.
MC_CHUNK = 1 << 16

# Stream namespaces so unrelated consumers of the same seed never collide.
NS_NOISE = 1
NS_FRAME = 2
NS_BIN = 3
NS_ALPHA = 4
NS_INJECT = 5
NS_EVENTWISE = 6
NS_LEVEL = 7
NS_WEIGHTS = 8


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a plain integer seed for substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def chunk_sizes(n_samples: int, chunk: int = MC_CHUNK) -> list[int]:
    """Split ``n_samples`` into fixed-size chunks (last one may be short)."""
    full, rest = divmod(int(n_samples), chunk)
    sizes = [chunk] * full
    if rest:
        sizes.append(rest)
    return sizes
