"""Counter-based random streams for reproducible simulation.

Every random decision in the simulator draws from a stream addressed by
(seed, purpose, round, group, client).  Streams are built on Philox, a
counter-based generator, so any entity's stream can be opened in any order,
from any thread, and always yields the same values.  Nothing here mutates
global state.
"""

import numpy as np

# Purpose tags keep unrelated decisions on disjoint streams even when the
# remaining coordinates collide.
INIT = 1        # model initialization
SAMPLE = 2      # per-round client sampling
BATCH = 3       # mini-batch selection during local training
NOISE = 4       # privacy noise
DATA = 5        # dataset synthesis / partitioning
RESTART = 6     # optimizer restarts

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: int, round_index: int = 0, group: int = 0,
           client: int = 0) -> np.random.Generator:
    """Open the deterministic stream for one (seed, purpose, t, group, client)."""
    seed, purpose = int(seed), int(purpose)
    round_index, group, client = int(round_index), int(group), int(client)
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    key = np.array([seed & _MASK64, purpose & _MASK64], dtype=np.uint64)
    # Word 0 is left free: Philox consumes the counter little-endian, so the
    # stream has 2**64 blocks before it would touch the identity words.
    counter = np.array(
        [0, client & _MASK64, group & _MASK64, round_index & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
