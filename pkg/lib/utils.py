import math
import threading
from typing import Dict, List, Sequence

import numpy as np

SEED_STREAMS = ["eps_mean", "histogram", "batches", "search"]


def is_permutation(values: Sequence[int], size: int) -> bool:
    values = np.asarray(values, dtype=np.int64)
    return len(values) == size and np.array_equal(np.sort(values), np.arange(size))


def ceil_fraction(fraction: float, total: int) -> int:
    # 0.07 * 100 is 7.000000000000001 in floating point
    return int(math.ceil(round(fraction * total, 9)))


def derive_seeds(seed: int, streams: List[str] = SEED_STREAMS) -> Dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(streams))
    return {
        name: int(child.generate_state(1, dtype=np.uint32)[0])
        for name, child in zip(streams, children)
    }


def round_robin(items: Sequence[int], workers: int) -> List[np.ndarray]:
    items = np.asarray(items, dtype=np.int64)
    return [items[w::workers] for w in range(workers)]


class AtomicCounter:
    """
    Counter shared between threads. `add` returns the value before the
    increment, which makes it usable as a slot reservation.
    """

    def __init__(self, start: int = 0) -> None:
        self._value = start
        self._lock = threading.Lock()

    def add(self, amount: int = 1) -> int:
        with self._lock:
            before = self._value
            self._value += amount
            return before

    @property
    def value(self) -> int:
        with self._lock:
            return self._value

    def reset(self) -> None:
        with self._lock:
            self._value = 0
