"""Deterministic parallel map over rays."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable


def default_threads() -> int:
    return os.cpu_count() or 1


def ordered_map(fn: Callable, items: Iterable, threads: int | None = None) -> list:
    """Apply fn to every item; results come back in input order for any thread count."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
