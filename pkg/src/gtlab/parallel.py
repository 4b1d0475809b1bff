"""Per-trial random streams and an order-preserving process pool."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

WORKERS_ENV = "GT_LAB_WORKERS"


def trial_rng(seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Generator for one trial, keyed by (seed, stream, trial) and nothing else."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(trial))))


def master_seed(rng: np.random.Generator | int | None) -> int:
    if rng is None:
        return 0
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**63 - 1))


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(float(raw)))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV}={raw!r} is not a number") from None


def _star(args):
    fn, a = args
    return fn(*a)


def map_trials(fn: Callable, jobs: Sequence[tuple], workers: int | None = None) -> list:
    """Apply ``fn(*job)`` to every job and return results in job order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    chunks = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_star, [(fn, j) for j in jobs], chunksize=chunks))
