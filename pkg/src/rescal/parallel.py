"""Thread cap shared by the estimators and the experiment runner."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


def thread_count() -> int:
    """Worker count from ``RESCAL_THREADS``; defaults to the available cores."""
    raw = os.environ.get("RESCAL_THREADS")
    if raw is None or raw.strip() == "":
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:
            return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RESCAL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("RESCAL_THREADS must be >= 1")
    return n


def parallel_map(fn, items):
    """``[fn(x) for x in items]``, run on a thread pool when more than one worker is allowed.

    Result order always follows ``items``, so outputs do not depend on the
    worker count.
    """
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
