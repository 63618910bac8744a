import asyncio
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence


def default_jobs() -> int:
    return os.cpu_count() or 1


async def _run_all(fn, items, jobs, on_done):
    loop = asyncio.get_running_loop()
    queue: asyncio.Queue = asyncio.Queue()
    for index, item in enumerate(items):
        queue.put_nowait((index, item))
    results: List = [None] * len(items)

    # fresh interpreters: a forked child of a process that already ran a parallel
    # numba kernel dies on its first threaded call
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:

        async def worker():
            """Pull tasks until the queue is drained."""
            while True:
                try:
                    index, item = queue.get_nowait()
                except asyncio.QueueEmpty:
                    return
                try:
                    results[index] = await loop.run_in_executor(pool, fn, item)
                    if on_done is not None:
                        on_done(index, results[index])
                finally:
                    queue.task_done()

        await asyncio.gather(*(worker() for _ in range(min(jobs, len(items)))))
    return results


def map_tasks(fn: Callable, items: Sequence, jobs: int = 1,
              on_done: Optional[Callable] = None) -> List:
    """
    Apply ``fn`` to every item and return the results in item order.

    Tasks are independent (one disorder realization, one resample, ...). With
    ``jobs > 1`` they run in a spawned process pool driven by an asyncio worker queue;
    ``fn`` and the items must then be picklable (module-level functions, plain data).
    ``on_done(index, result)`` fires in the calling process as tasks finish, in
    completion order. The returned list never depends on ``jobs``.
    """
    items = list(items)
    if not items:
        return []
    if jobs is None or jobs <= 0:
        jobs = default_jobs()
    if jobs == 1 or len(items) == 1:
        results = []
        for index, item in enumerate(items):
            results.append(fn(item))
            if on_done is not None:
                on_done(index, results[-1])
        return results
    return asyncio.run(_run_all(fn, items, jobs, on_done))
