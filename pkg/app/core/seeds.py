import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 64-bit seed for (seed, keys...), independent of call order"""
    state = np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])
