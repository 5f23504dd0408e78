"""Worker-pool helpers: BLAS thread limiting and worker-count resolution.

The numeric kernels here are many small matrices; multithreaded BLAS only
adds contention, especially with one worker process per core.
"""

import contextlib
import os


def limit_worker_threads():
    """Pin BLAS pools to one thread in the current process (no-op if
    threadpoolctl is unavailable)."""
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=1)
    except Exception:
        pass


@contextlib.contextmanager
def single_thread_blas():
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=1):
            yield
    except ImportError:
        yield


def resolve_workers(workers):
    return workers or int(os.environ.get("MOMAPLAN_THREADS", "0")) or (os.cpu_count() or 1)
