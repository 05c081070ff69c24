"""Deterministic block-wise random streams for simulation loops.

Iterations are grouped into fixed-size blocks and every block draws from its
own generator keyed by ``(seed, block_index)``. Results therefore depend only
on the seed and the iteration count, never on how blocks are scheduled.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 256


def block_generator(seed, block_index, stream=0):
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(stream), int(block_index)])
    return np.random.Generator(np.random.PCG64(ss))


def run_blocks(func, n_iter, seed, n_jobs=1, stream=0, block_size=BLOCK_SIZE):
    """Evaluate ``func(rng, n)`` over blocks and concatenate along axis 0.

    Parameters
    ----------
    func : callable
        ``func(rng, n)`` must return an array whose first axis has length ``n``.
    n_iter : int
        Total number of iterations.
    seed : int
        Base seed.
    n_jobs : int, default=1
        Number of worker threads. Output does not depend on this value.
    stream : int, default=0
        Distinguishes independent simulations sharing one seed.
    """
    n_iter = int(n_iter)
    starts = list(range(0, n_iter, block_size))
    tasks = [(i, min(block_size, n_iter - s)) for i, s in enumerate(starts)]

    def _one(task):
        idx, n = task
        return func(block_generator(seed, idx, stream), n)

    if n_jobs is None or n_jobs == 1 or len(tasks) == 1:
        parts = [_one(t) for t in tasks]
    else:
        workers = None if n_jobs < 0 else int(n_jobs)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_one, tasks))
    return np.concatenate(parts, axis=0)
