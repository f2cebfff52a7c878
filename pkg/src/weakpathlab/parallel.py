"""Deterministic batch execution.

Work is split into batches of a fixed, thread-independent layout; each batch
derives its own random stream from its index.  Threads only decide which
worker computes which batch, and results are reduced in batch order, so
every numeric output is identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

R = TypeVar("R")

__all__ = ["batch_layout", "deterministic_batch_map"]


def batch_layout(n_total: int, batch_size: int) -> list[tuple[int, int]]:
    """Fixed (offset, size) decomposition of ``n_total`` samples."""
    if n_total < 1 or batch_size < 1:
        raise ValueError("n_total and batch_size must be positive")
    out = []
    off = 0
    while off < n_total:
        size = min(batch_size, n_total - off)
        out.append((off, size))
        off += size
    return out


def deterministic_batch_map(
    worker: Callable[[int], R], n_batches: int, threads: int = 1
) -> list[R]:
    """``[worker(0), ..., worker(n_batches - 1)]`` in index order."""
    if threads <= 1 or n_batches <= 1:
        return [worker(i) for i in range(n_batches)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(n_batches)))
