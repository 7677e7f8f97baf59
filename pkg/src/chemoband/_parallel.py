"""Thread fan-out capped by the ``CHEMOBAND_THREADS`` environment variable."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def max_workers() -> int:
    raw = os.environ.get("CHEMOBAND_THREADS", "")
    try:
        value = int(raw)
    except ValueError:
        value = os.cpu_count() or 1
    return max(1, value)


def ordered_map(func: Callable[[T], R], items: Iterable[T], workers: int = 0) -> List[R]:
    """``list(map(func, items))``, optionally on a thread pool; order is preserved."""
    items = list(items)
    workers = workers or max_workers()
    if workers == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))
