"""Process pool for per-scenario work; results keep input order."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional


def worker_count(requested: Optional[int] = None) -> int:
    """CPU count, capped by NMP_THREADS and by ``requested``."""
    n = os.cpu_count() or 1
    env = os.environ.get("NMP_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ValueError(f"NMP_THREADS must be an integer, got {env!r}") from None
    if requested is not None:
        n = min(n, max(1, requested))
    return n


def pmap(fn: Callable, items: Iterable, workers: int = 1, initializer=None, initargs=()) -> list:
    """``[fn(x) for x in items]``, fanned out over processes when workers > 1.

    ``fn`` and ``initializer`` must be module-level so they pickle.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
