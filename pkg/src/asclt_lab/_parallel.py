"""Deterministic chunked replication over a thread pool."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_CHUNK = 256


def default_threads() -> int:
    value = os.environ.get("ASCLT_LAB_THREADS")
    if value:
        return max(1, int(value))
    return 1


def chunk_ranges(total: int, chunk: int = DEFAULT_CHUNK):
    return [(start, min(start + chunk, total)) for start in range(0, total, chunk)]


def replicate(task, total: int, threads: int | None = None, chunk: int = DEFAULT_CHUNK):
    """Run ``task(start, stop)`` over fixed index chunks and concatenate.

    The chunk layout depends only on ``total`` and ``chunk``; results are
    reassembled in index order, so the output is identical for any thread
    count.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    ranges = chunk_ranges(total, chunk)
    if threads == 1 or len(ranges) == 1:
        parts = [task(a, b) for a, b in ranges]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: task(*ab), ranges))
    return np.concatenate(parts, axis=0)
