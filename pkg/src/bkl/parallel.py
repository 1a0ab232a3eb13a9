"""Deterministic replica-parallel map.

Work is cut into fixed-size chunks of replica indices that do not depend on
the worker count; chunk results are returned in chunk order. Since every
replica draws from the stream ``(seed, index)``, the concatenated output is
identical for any number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

CHUNK = 8192


def chunks(n: int, size: int = CHUNK) -> list[tuple[int, int]]:
    """``(start, count)`` pairs covering ``range(n)``."""
    if n < 0:
        raise ValueError(f"replicate count must be >= 0, got {n}")
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def default_workers() -> int:
    return int(os.environ.get("BKL_WORKERS", "1"))


def run_chunks(fn: Callable, args: Sequence, n: int, workers: int | None = None, size: int = CHUNK) -> list:
    """``[fn(*args, start, count) for each chunk]`` in chunk order."""
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    tasks = [(*args, s, c) for s, c in chunks(n, size)]
    if workers == 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_star, [(fn, t) for t in tasks]))


def _star(item):
    fn, t = item
    return fn(*t)
