import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed on ``seed`` and an optional stream path.

    ``make_rng(seed, chain)`` and ``make_rng(seed, shard)`` give independent,
    reproducible sub-streams without any shared global state.
    """
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))
