"""Seeded random streams.

Every experiment owns one integer seed. Independent pieces of work (a sweep
cell, a block of replications, the dataset of one search replication) get
their own generator from ``substream(seed, *keys)``, so results never depend
on how the work was scheduled.
"""
import numpy as np

# Named keys for paired fixed-vs-reshuffled designs.
DATA = 0
ORDER = 1
SPLITS = 2

SEED_BITS = 63


def make_stream(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def substream(seed, *keys):
    """Generator for the piece of work identified by ``keys`` under ``seed``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def draw_seed():
    """Fresh seed from OS entropy, to be recorded in the run manifest."""
    return int(np.random.SeedSequence().entropy % (1 << SEED_BITS))


def blocks(total, block_size):
    """Split ``total`` items into ``(block_index, count)`` chunks of fixed size."""
    if total < 1:
        return []
    out = []
    start = 0
    index = 0
    while start < total:
        count = min(block_size, total - start)
        out.append((index, count))
        start += count
        index += 1
    return out
