"""Row-chunked worker pool used by the per-pixel kernels.

Work is always cut into the same fixed-size chunks, so results never depend
on how many workers process them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "MESHREG_WORKERS"
CHUNK = 8192


def default_workers() -> int:
    """Worker count from ``MESHREG_WORKERS``, else the CPU count."""
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return os.cpu_count() or 1
    return max(n, 1)


def for_chunks(n: int, fn, workers: int | None = None, chunk: int = CHUNK) -> None:
    """Call ``fn(start, stop)`` over ``[0, n)`` in fixed chunks; ``fn`` must write disjoint outputs."""
    if workers is None:
        workers = default_workers()
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if workers <= 1 or len(bounds) <= 1:
        for s, e in bounds:
            fn(s, e)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, s, e) for s, e in bounds]
        for f in futures:
            f.result()
