"""Reproducible random streams.

All randomness in the package flows through Philox, a 64-bit counter-based
generator. Independent substreams are addressed by an integer path (e.g. one
stream per outer iteration), so results do not depend on draw ordering or
thread count.
"""

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox stream addressed by ``(seed, *path)``.

    Streams with different paths are statistically independent, and the same
    ``(seed, path)`` always yields an identical generator state.
    """
    seq = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse ``(seed, *path)`` into a single 63-bit seed."""
    seq = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
