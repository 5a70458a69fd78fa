"""Order-preserving parallel map capped by ``SUBWAVE_THREADS``."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable


def max_workers() -> int:
    raw = os.environ.get("SUBWAVE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn: Callable, items: Iterable) -> list:
    """``[fn(x) for x in items]``, threaded when ``SUBWAVE_THREADS > 1``.

    Results keep the input order, so reports do not depend on scheduling.
    """
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
