"""
Worker pool for independent simulations.

Results come back in input order, so aggregation by index does not depend on
the worker count. threads == 1 runs inline in the calling process.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Iterable, Optional, TypeVar

from tqdm import tqdm

from app.logging_config import progress_enabled

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_CHUNK = 16


def resolve_threads(threads: int) -> int:
    """0 means all cores."""
    return threads if threads > 0 else (os.cpu_count() or 1)


def parallel_map(
    fn: Callable[..., R],
    items: Iterable[T],
    threads: int = 0,
    desc: Optional[str] = None,
    **kwargs,
) -> list[R]:
    """Order-preserving map of a picklable function over items."""
    items = list(items)
    task = partial(fn, **kwargs) if kwargs else fn
    workers = min(resolve_threads(threads), max(len(items), 1))
    log_data = {"event": "parallel-map", "items": len(items), "workers": workers}
    logger.debug(json.dumps(log_data))
    bar = tqdm(total=len(items), desc=desc, disable=not progress_enabled() or desc is None)
    results: list[R] = []
    try:
        if workers == 1:
            for item in items:
                results.append(task(item))
                bar.update()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for result in pool.map(task, items, chunksize=_CHUNK):
                    results.append(result)
                    bar.update()
    finally:
        bar.close()
    return results
