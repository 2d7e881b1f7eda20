"""Order-preserving parallel map over a bounded worker pool.

Work units derive their randomness from stable ids, never from worker
identity or scheduling, so `pmap(fn, items, workers=n)` returns the same
list for every n.  The shared context (augmentation plan, texture corpus)
is shipped to each worker once via the pool initializer instead of per task.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable

_WORKER_CTX: Any = None


def _init_worker(ctx: Any) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _call(packed: tuple[Callable, Any]) -> Any:
    fn, item = packed
    return fn(_WORKER_CTX, item)


def pmap(fn: Callable[[Any, Any], Any], items: Iterable[Any], workers: int = 1, ctx: Any = None) -> list:
    """Map fn(ctx, item) over items, in order; serial when workers <= 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(ctx, it) for it in items]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(ctx,)
    ) as ex:
        return list(ex.map(_call, [(fn, it) for it in items]))
