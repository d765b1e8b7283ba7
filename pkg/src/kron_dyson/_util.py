"""Worker-count resolution and deterministic parallel mapping."""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import InputError

THREADS_ENV = "KRON_DYSON_THREADS"


def resolve_threads(requested=None):
    """Worker count: KRON_DYSON_THREADS wins over the argument, default 1."""
    raw = os.environ.get(THREADS_ENV)
    if raw is not None:
        try:
            value = int(raw)
        except ValueError:
            raise InputError(f"{THREADS_ENV}={raw!r} is not an integer") from None
        if value < 1:
            raise InputError(f"{THREADS_ENV} must be >= 1, got {value}")
        return value
    if requested is None:
        return 1
    if requested < 1:
        raise InputError(f"thread count must be >= 1, got {requested}")
    return int(requested)


def parallel_map(fn, items, threads):
    """Order-preserving map; results depend only on items, never on scheduling.

    Work units must derive all randomness from their own item (e.g. a
    per-sample substream), which keeps outputs bit-identical for any
    worker count. numpy releases the GIL in the heavy kernels, so threads
    give real parallelism for LAPACK-bound work.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
