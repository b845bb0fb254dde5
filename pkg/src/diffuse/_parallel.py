"""Order-preserving process pool used for replications and target variables."""
import os
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

THREADS_ENV = "DIFFUSE_THREADS"


def resolve_threads(threads=None):
    """Worker count from the argument, else ``$DIFFUSE_THREADS``, else 1."""
    if threads is None:
        threads = os.environ.get(THREADS_ENV, 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def _call_single_threaded(fn, arg):
    # BLAS stays single threaded in every worker so results are bitwise
    # identical whether a task runs inline or in a pool.
    with threadpool_limits(limits=1):
        return fn(arg)


def map_ordered(fn, args, threads=1):
    """``[fn(a) for a in args]``, optionally spread over worker processes.

    The returned list is always in input order, so any reduction over it is
    independent of scheduling.
    """
    args = list(args)
    if threads <= 1 or len(args) <= 1:
        return [_call_single_threaded(fn, a) for a in args]
    with ProcessPoolExecutor(max_workers=min(threads, len(args))) as pool:
        futures = [pool.submit(_call_single_threaded, fn, a) for a in args]
        return [f.result() for f in futures]
