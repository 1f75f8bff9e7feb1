"""Small shared helpers: deterministic parallel mapping and slope fits."""

import multiprocessing

import numpy as np

_ACTIVE = None


def _invoke(item):
    return _ACTIVE(item)


def parallel_map(fn, items, threads):
    """Map fn over items, preserving order and bit-identical results.

    threads <= 1 runs sequentially. Otherwise a fork-based process pool is
    used: workers inherit the parent's memory, so fn may close over
    unpicklable state (factorizations); results are gathered in input order,
    which keeps every downstream reduction independent of the worker count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    global _ACTIVE
    ctx = multiprocessing.get_context("fork")
    _ACTIVE = fn
    try:
        with ctx.Pool(min(threads, len(items))) as pool:
            chunk = max(1, len(items) // (4 * threads))
            return pool.map(_invoke, items, chunksize=chunk)
    finally:
        _ACTIVE = None


def fit_loglog_slope(x, y):
    """Least-squares slope of log2(y) against log2(x)."""
    lx, ly = np.log2(np.asarray(x, dtype=float)), np.log2(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
