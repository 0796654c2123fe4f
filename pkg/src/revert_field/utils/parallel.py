"""
Ordered fan-out over a thread pool sized by REVERT_FIELD_THREADS.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from dotenv import load_dotenv

from ..core.models import RuntimeSettings

T = TypeVar("T")
R = TypeVar("R")


def get_runtime_settings() -> RuntimeSettings:
    load_dotenv()
    return RuntimeSettings()


def worker_count(limit: Optional[int] = None) -> int:
    threads = get_runtime_settings().threads
    count = threads if threads is not None else (os.cpu_count() or 1)
    if limit is not None:
        count = min(count, limit)
    return max(1, count)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Map fn over items in parallel; results come back in input order."""
    items = list(items)
    if not items:
        return []
    workers = workers or worker_count(len(items))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
