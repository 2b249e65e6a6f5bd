"""Seed handling.

Every random stream is derived from one master seed with
``numpy.random.SeedSequence(master, spawn_key=key)``, where ``key`` is a tuple
of small integers naming the stream. The keys used by the package:

==========================  ==========================================
key                         stream
==========================  ==========================================
``(1, k)``                  simulated data set ``k`` (simulation lab)
``(2, k)``                  estimator run on simulated data set ``k``
``(3, r)``                  bootstrap replicate ``r`` of one estimator run
``(4, j)``                  completed data set ``j`` of a MICE run
``(5,)``                    truth oracle
==========================  ==========================================

Streams nest by extending the key of the parent, so results never depend on
execution order or worker count.
"""
import numpy as np

DATA, ESTIMATE, REPLICATE, MICE, TRUTH = 1, 2, 3, 4, 5


def as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(0, 2**63)))
    return np.random.SeedSequence(int(seed))


def child(seed, *key):
    """Deterministic sub-stream of ``seed`` identified by ``key``."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))


def generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(as_seed_sequence(seed))
