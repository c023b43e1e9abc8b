"""Order-preserving process-pool map for independent model runs."""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

_FN = None
_ITEMS = None


def _call(i):
    return _FN(_ITEMS[i])


def default_jobs() -> int:
    return os.cpu_count() or 1


def parallel_map(fn, items, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally spread over forked workers.

    Results come back in input order, so reductions do not depend on which
    worker finished first. ``fn`` may be a closure because workers are forked.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) < 2 or "fork" not in mp.get_all_start_methods():
        return [fn(x) for x in items]
    global _FN, _ITEMS
    _FN, _ITEMS = fn, items
    try:
        with ProcessPoolExecutor(min(jobs, len(items)), mp_context=mp.get_context("fork")) as ex:
            return list(ex.map(_call, range(len(items))))
    finally:
        _FN, _ITEMS = None, None
