"""Ordered thread-pool mapping.

Work is cut into chunks whose boundaries do not depend on the worker count,
and results are gathered in submission order, so the output of every sweep is
independent of how many threads ran it.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "BLOCHLAB_THREADS"
CHUNK = 512

_default_threads: int | None = None


def set_default_threads(n: int | None) -> None:
    global _default_threads
    _default_threads = None if n is None else max(1, int(n))


def resolve_threads(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    if _default_threads is not None:
        return _default_threads
    env = os.environ.get(ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int | None = None) -> list[R]:
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def chunk_ranges(total: int, size: int = CHUNK) -> list[tuple[int, int]]:
    return [(start, min(start + size, total)) for start in range(0, total, size)]
