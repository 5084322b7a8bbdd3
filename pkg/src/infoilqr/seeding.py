"""Deterministic derivation of independent random streams.

Every stochastic quantity in this package (initial-state deviation, process
noise, measurement noise, control perturbations) is drawn from its own
generator, keyed by an integer seed plus a tuple of integer tags.  Toggling
one noise source on or off therefore never reshuffles the draws of another,
and results are independent of the order in which rollouts execute.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream tags: one per independently seeded noise source.
STREAM_INITIAL = 0
STREAM_PROCESS = 1
STREAM_MEASUREMENT = 2
STREAM_PERTURBATION = 3


def child_seed(seed: int, *tags: int) -> int:
    """Derive a new 64-bit seed from ``seed`` and a tuple of integer tags.

    The derivation is a pure function of its arguments (numpy's SeedSequence
    entropy pooling), so hierarchies of seeds can be rebuilt identically.
    """
    entropy = (seed & _MASK64,) + tuple(int(t) & _MASK64 for t in tags)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def stream_generator(seed: int, stream: int, *tags: int) -> np.random.Generator:
    """Generator for one noise stream of one rollout."""
    entropy = (seed & _MASK64, int(stream) & _MASK64)
    entropy += tuple(int(t) & _MASK64 for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
