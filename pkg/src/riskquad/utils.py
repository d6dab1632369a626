"""Small shared helpers: float formatting and ordered parallel maps."""

from concurrent.futures import ThreadPoolExecutor


def fmt(x):
    """Format a float with 17 significant digits (lossless round trip)."""
    return format(float(x), ".17g")


def map_indexed(fn, n, threads=1):
    """Evaluate ``fn(i)`` for ``i in range(n)``, returning results in index order.

    With ``threads > 1`` the work is spread over a thread pool; results are
    still reduced in index order so output is independent of scheduling.
    """
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))
