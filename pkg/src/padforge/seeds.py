"""Counter-based seed derivation.

All randomness in the pipeline flows from explicit integer seeds through
`rng_from` / `seed_from`; no function touches numpy's global RNG state.
A derived stream is keyed by a tuple of integers (purpose tag, user seed,
counter...), so independent stages and independent samples get independent,
reproducible streams regardless of execution order or parallelism.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose tags keeping unrelated streams apart even for equal user seeds.
TAG_IDENTITY = 0x01
TAG_APPEARANCE = 0x02
TAG_TCL = 0x03
TAG_BATCH = 0x04
TAG_AUGMENT = 0x05
TAG_SPLIT = 0x06


def rng_from(*keys: int) -> np.random.Generator:
    """Deterministic generator keyed by a tuple of integers."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & _MASK64 for k in keys]))


def seed_from(*keys: int) -> int:
    """Deterministic 63-bit seed derived from a tuple of integers.

    Used to split one master seed into per-stage / per-run seeds that can be
    recomputed without running the other stages.
    """
    state = np.random.SeedSequence([int(k) & _MASK64 for k in keys]).generate_state(1, np.uint64)
    return int(state[0] >> 1)
