"""Thread pool sized by ``TILELAB_THREADS``; results always come back in input order."""
import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    raw = os.environ.get("TILELAB_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"TILELAB_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def pmap(fn, items, threads=None):
    items = list(items)
    n = thread_count() if threads is None else max(1, threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
