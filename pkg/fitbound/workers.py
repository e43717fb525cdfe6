from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """
    Apply ``fn`` to every item and return the results in input order.

    With ``jobs > 1`` the calls run on a thread pool; numpy releases the GIL
    inside its kernels so per-input Jacobians and Monte-Carlo blocks overlap.
    Callers reduce the returned list themselves, which keeps every aggregate
    independent of the parallelism degree.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def chunk_sizes(total: int, chunk: int) -> List[int]:
    """Split ``total`` into fixed-size blocks; the last block takes the remainder."""
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes
