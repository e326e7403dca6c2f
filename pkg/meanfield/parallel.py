"""Ordered worker pool for replication-level parallelism."""
from __future__ import annotations

from contextlib import contextmanager
from multiprocessing.pool import ThreadPool

from .conf import solver_setting


@contextmanager
def _pool(workers: int):
    pool = ThreadPool(workers)
    try:
        yield pool
    finally:
        pool.close()
        pool.join()


def ordered_map(func, items, workers: int | None = None) -> list:
    """
    Map ``func`` over ``items`` and return results in input order.

    Every task seeds its own streams from its index, so results do not depend
    on the worker count; with one worker nothing leaves the calling thread.
    """
    items = list(items)
    workers = int(workers or solver_setting("WORKERS"))
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with _pool(min(workers, len(items))) as pool:
        return pool.map(func, items)
