"""Named, seeded random streams.

All randomness in a run flows from one master seed; independent purposes
(data sampling, uplink channel, downlink channel, initialization) get
disjoint generators derived via spawn keys, so schemes that share a seed
share data draws exactly while consuming channel noise independently.
"""

from __future__ import annotations

import numpy as np

INIT = 0
DATA = 1
UPLINK = 2
DOWNLINK = 3
SAMPLER = 4


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the sub-stream identified by ``path`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=path))


def state_digest(rng: np.random.Generator) -> str:
    """Stable witness of how far a stream has been consumed."""
    state = rng.bit_generator.state
    return f"{state['bit_generator']}:{state['state']}"
