"""Named deterministic random streams.

All randomness in the pipeline flows from a single master seed fanned out to
named sub-streams ("synth", "init.video", "train.shuffle", ...). The mapping
from (seed, name) to a generator is stable across runs and platforms, and
independent streams never share state.
"""

import hashlib

import numpy as np


def seed_stream(master_seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream `name` derived from `master_seed`."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    child = int.from_bytes(digest[:8], "little")
    ss = np.random.SeedSequence(entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(child,))
    return np.random.Generator(np.random.PCG64(ss))
