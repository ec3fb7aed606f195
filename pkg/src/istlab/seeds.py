"""Deterministic seed-stream derivation for replicated Monte Carlo runs.

Splitting rule: the stream for replica ``i`` of master seed ``s`` is
``default_rng(SeedSequence(s, spawn_key=(i,)))``.  Streams are independent of
each other and of scheduling, so results do not depend on the thread count.

Batch path engines draw vectorized randomness per *chunk* of replicas; the
chunk size is a fixed constant (not tied to the worker count) and chunk ``j``
uses the stream ``(seed, j)``, which keeps batched results bit-reproducible
for any ``--threads`` value.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# fixed chunk width for batched engines; must never depend on thread count
CHUNK = 8192


def resolve_threads(threads):
    """Worker count: explicit argument, else IST_LAB_THREADS, else 1."""
    if threads is None:
        return max(1, int(os.environ.get("IST_LAB_THREADS", "1")))
    return max(1, int(threads))


def spawn_rng(seed, *key):
    """Independent Generator for (seed, key...) under the documented splitting rule."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def replica_seeds(seed, n):
    """SeedSequences for replicas 0..n-1 (cheap; generators built lazily by workers)."""
    return [np.random.SeedSequence(seed, spawn_key=(i,)) for i in range(n)]


def parallel_map(fn, items, threads=None):
    """Map fn over items, preserving order; threads > 1 uses a thread pool.

    fn must not mutate shared state; per-item RNGs make results order- and
    scheduling-independent.
    """
    threads = resolve_threads(threads)
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
