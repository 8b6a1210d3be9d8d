"""Named deterministic random streams derived from one run seed.

Every stochastic component (mask init, MLP init, k-means seeding, edit
sampling, splits, synthetic data, batch shuffling) pulls from its own
substream, so adding draws to one component never perturbs another and
a single seed reproduces a whole run bit for bit.
"""

from __future__ import annotations

import numpy as np

STREAMS = ("masks", "mlp", "kmeans", "drd", "splits", "synth", "batches",
           "grid")
_IDS = {name: i for i, name in enumerate(STREAMS)}


def stream(seed: int, name: str, *extra) -> np.random.Generator:
    """Generator for substream `name`, optionally keyed further by ints
    (e.g. stream(seed, "drd", layer, mask) for per-mask edit streams)."""
    if name not in _IDS:
        raise ValueError(f"unknown stream {name!r}, know {STREAMS}")
    key = (_IDS[name],) + tuple(int(x) for x in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def derive_seed(seed: int, *extra) -> int:
    """Stable derived integer seed (used for per-fold run seeds)."""
    key = (len(STREAMS),) + tuple(int(x) for x in extra)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2 ** 31))
