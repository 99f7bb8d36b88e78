"""Order-preserving process-pool map."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, tasks, threads: int) -> list:
    """``[fn(t) for t in tasks]``, spread over at most ``threads`` worker processes.

    Results come back in task order whatever the completion order, so callers
    that reduce them sequentially get the same answer for any worker count.
    """
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * threads))
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))
