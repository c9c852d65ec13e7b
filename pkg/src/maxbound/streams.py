"""Per-path random streams.

Every path ``k`` of a run with seed ``s`` draws from its own Philox4x64-10
stream keyed by ``(s, k)``; a small integer tag in the counter separates the
different samplers.  Results therefore do not depend on how paths are split
across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

GENERATOR_ID = "philox4x64-10"

_MASK64 = (1 << 64) - 1

# counter tags, one per consumer
TAG_EXACT = 1
TAG_WALK = 2
TAG_BRIDGE = 3
TAG_JUMP = 4
TAG_FIXTURE = 5


def path_generator(seed: int, index: int, tag: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(tag) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def worker_count() -> int:
    raw = os.environ.get("MAXBOUND_THREADS")
    if raw is None:
        return 1
    try:
        k = int(raw)
    except ValueError:
        raise ValueError(f"MAXBOUND_THREADS must be an integer, got {raw!r}") from None
    return max(1, k)


def per_path(fn, seed: int, paths: int, tag: int, start: int = 0, workers: int | None = None):
    """Call ``fn(gen, index)`` for each path and return the results in path order."""
    workers = worker_count() if workers is None else workers
    idx = range(start, start + paths)
    if workers <= 1 or paths < 2 * workers:
        return [fn(path_generator(seed, k, tag), k) for k in idx]
    chunks = np.array_split(np.arange(start, start + paths), workers)

    def run(chunk):
        return [fn(path_generator(seed, int(k), tag), int(k)) for k in chunk]

    with ThreadPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(run, chunks))
    return [r for part in parts for r in part]


def uniforms(seed: int, paths: int, k: int, tag: int, start: int = 0) -> np.ndarray:
    """``(paths, k)`` array of U[0, 1) draws, row ``j`` from path ``start + j``."""
    rows = per_path(lambda g, _: g.random(k), seed, paths, tag, start)
    return np.array(rows).reshape(paths, k)
