"""
Utility functions for worstenroll.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from .logging import get_logger

_logger = get_logger("utils")

MAX_WORKERS_ENV = "WORSTENROLL_MAX_WORKERS"
DEFAULT_MAX_WORKERS = 4

T = TypeVar("T")
R = TypeVar("R")


def ensure_parent_dir(file_path: str) -> None:
    """
    Ensure parent directory of a file exists.

    Args:
        file_path: Path to file
    """
    parent = os.path.dirname(str(file_path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def get_max_workers(default: int = DEFAULT_MAX_WORKERS) -> int:
    """
    Resolve the worker pool size from WORSTENROLL_MAX_WORKERS.

    Invalid values fall back to ``default``; the result is at least 1.
    """
    env_max_workers = os.getenv(MAX_WORKERS_ENV)
    try:
        configured = int(env_max_workers) if env_max_workers else default
    except ValueError:
        configured = default
    return max(configured, 1)


def map_ordered(
    func: Callable[[T], R],
    items: Sequence[T],
    max_workers: Optional[int] = None,
    on_done: Optional[Callable[[int], None]] = None,
) -> List[R]:
    """
    Apply ``func`` to every item on a thread pool, keeping input order.

    All futures are awaited; the first failure (in input order) is
    re-raised afterwards.

    Args:
        func: Function applied to each item
        items: Work items
        max_workers: Pool size (default: WORSTENROLL_MAX_WORKERS or 4)
        on_done: Callback invoked with 1 after each finished item

    Returns:
        Results in the order of ``items``
    """
    if not items:
        return []

    workers = min(max_workers or get_max_workers(), len(items))
    if workers == 1:
        results = []
        for item in items:
            results.append(func(item))
            if on_done:
                on_done(1)
        return results

    first_exception: Optional[BaseException] = None
    results_by_index: List[Optional[R]] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(func, item) for item in items]
        for index, future in enumerate(futures):
            exc = future.exception()
            if on_done:
                on_done(1)
            if exc is not None:
                _logger.error(f"Work item {index} failed: {exc}")
                if first_exception is None:
                    first_exception = exc
                continue
            results_by_index[index] = future.result()
    if first_exception is not None:
        raise first_exception
    return [r for r in results_by_index]  # type: ignore[misc]
