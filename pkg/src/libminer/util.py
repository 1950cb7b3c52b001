"""Small shared helpers."""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def stable_seed(*parts: object) -> int:
    """Deterministic 63-bit seed from any mix of strings and numbers.
    Unlike hash(), stable across processes and runs."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    """Order-preserving map, forked across processes when jobs > 1.

    fn must be picklable (module-level).  Results come back in input order
    so parallelism never perturbs downstream determinism.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def dedup_stable(items: Iterable[T]) -> list[T]:
    """Drop duplicates, keeping first occurrences in order."""
    seen: set[T] = set()
    out: list[T] = []
    for it in items:
        if it not in seen:
            seen.add(it)
            out.append(it)
    return out
