import logging
import math
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from lib.core import Dataset, short_circuit_distances
from lib.errors import BufferOverflowError, UsageError
from lib.grid_index import GridIndex, candidate_ids, range_query
from lib.types import CONTIGUOUS, GranularityPolicy, QueryStatus
from lib.utils import AtomicCounter, ceil_fraction

MIN_BATCHES = 3
PIPELINE_DEPTH = 3
DEFAULT_BUFFER_SIZE = 10**8
ORACLE_BLOCK = 128


@dataclass(frozen=True)
class BatchPlan:
    estimate_e: float
    buffer_size: int
    n_batches: int
    query_ranges: List[np.ndarray]
    sample_size: int = 0
    sampled_pairs: int = 0
    safety_margin: float = 0.0

    def describe_json(self) -> Dict[str, Any]:
        return {
            "estimate_e": self.estimate_e,
            "buffer_size": self.buffer_size,
            "n_batches": self.n_batches,
            "sample_size": self.sample_size,
            "sampled_pairs": self.sampled_pairs,
            "safety_margin": self.safety_margin,
            "queries_per_batch": [len(r) for r in self.query_ranges],
        }


def batch_count(estimate_e: float, buffer_size: int) -> int:
    if buffer_size < 1:
        raise UsageError("buffer_size must be >= 1")
    return max(MIN_BATCHES, int(math.ceil(estimate_e / buffer_size)))


def slice_batches(q_gpu: np.ndarray, n_batches: int) -> List[np.ndarray]:
    """Near-equal contiguous slices of the (sorted) dense query set."""
    if len(q_gpu) == 0:
        return []
    return [np.asarray(r, dtype=np.int64) for r in np.array_split(np.sort(q_gpu), n_batches)]


def estimate_batches(
    g: GridIndex,
    q_gpu: np.ndarray,
    sample_fraction: float,
    buffer_size: int,
    seed: int = 0,
    sample_floor: int = 100,
    safety_margin: float = 0.25,
    n_batches_override: Optional[int] = None,
) -> BatchPlan:
    """
    Runs the range query over a seeded sample of the dense queries and
    extrapolates the total number of result pairs, self pairs included.
    """
    if sample_fraction <= 0 or sample_fraction > 1:
        raise UsageError("sample_fraction must be > 0.0 and <= 1.0")
    if buffer_size < 1:
        raise UsageError("buffer_size must be >= 1")

    q_gpu = np.sort(np.asarray(q_gpu, dtype=np.int64))
    if len(q_gpu) == 0:
        return BatchPlan(0.0, buffer_size, 0, [], safety_margin=safety_margin)

    sample_size = min(
        len(q_gpu), max(ceil_fraction(sample_fraction, len(q_gpu)), min(sample_floor, len(q_gpu)))
    )
    rng = np.random.default_rng(seed)
    sample = q_gpu[np.sort(rng.choice(len(q_gpu), size=sample_size, replace=False))]

    sampled_pairs = 0
    for q in sample.tolist():
        ids, _ = range_query(g, q, g.eps)
        sampled_pairs += len(ids)

    estimate_e = sampled_pairs * len(q_gpu) / sample_size
    if n_batches_override is not None:
        n_batches = n_batches_override
    else:
        n_batches = batch_count(estimate_e * (1 + safety_margin), buffer_size)

    plan = BatchPlan(
        estimate_e=float(estimate_e),
        buffer_size=buffer_size,
        n_batches=n_batches,
        query_ranges=slice_batches(q_gpu, n_batches),
        sample_size=sample_size,
        sampled_pairs=sampled_pairs,
        safety_margin=safety_margin,
    )

    log_fields = {
        "estimate_e": plan.estimate_e,
        "n_batches": n_batches,
        "sample_size": sample_size,
        "buffer_size": buffer_size,
    }
    logging.info(f"batches estimated | {log_fields}")

    return plan


class JoinPairBuffer:
    """
    Result buffer of one batch. Workers reserve a slice through a shared
    counter and write their (key, neighbor, distance) triples into it.
    """

    def __init__(self, batch_index: int, query_ids: np.ndarray, capacity: int) -> None:
        self.batch_index = batch_index
        self.query_ids = np.asarray(query_ids, dtype=np.int64)
        self.capacity = capacity
        self._reserved = AtomicCounter()
        self._keys = np.empty(capacity, dtype=np.int64)
        self._neighbors = np.empty(capacity, dtype=np.int64)
        self._distances = np.empty(capacity, dtype=np.float64)

    def append(self, key: int, neighbors: np.ndarray, distances: np.ndarray) -> None:
        count = len(neighbors)
        if count == 0:
            return

        start = self._reserved.add(count)
        if start + count > self.capacity:
            raise BufferOverflowError(self.batch_index, start + count, self.capacity)

        self._keys[start : start + count] = key
        self._neighbors[start : start + count] = neighbors
        self._distances[start : start + count] = distances

    def __len__(self) -> int:
        return min(self._reserved.value, self.capacity)

    def entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries ordered by (key, neighbor id)."""
        size = len(self)
        keys = self._keys[:size]
        neighbors = self._neighbors[:size]
        distances = self._distances[:size]

        order = np.lexsort((neighbors, keys))
        return keys[order], neighbors[order], distances[order]


def _stripe(candidates: np.ndarray, worker: int, workers: int, striping: str) -> np.ndarray:
    if striping == CONTIGUOUS:
        size = len(candidates)
        return candidates[(worker * size) // workers : ((worker + 1) * size) // workers]
    return candidates[worker::workers]


def execute_batch(
    g: GridIndex,
    batch: np.ndarray,
    eps: float,
    policy: GranularityPolicy,
    buffer_size: int = DEFAULT_BUFFER_SIZE,
    batch_index: int = 0,
    threads: int = 1,
    chunk: int = 8,
) -> JoinPairBuffer:
    """
    Join kernel of one batch. The candidate list of every query point is
    striped across `policy.workers_per_point` workers; each worker scans
    its share of every query of the batch.
    """
    if eps != g.eps:
        raise UsageError(f"batch eps {eps} differs from the index eps {g.eps}")

    batch = np.asarray(batch, dtype=np.int64)
    buffer = JoinPairBuffer(batch_index, batch, buffer_size)
    if len(batch) == 0:
        return buffer

    points = g.dataset.metric_points
    candidates = [candidate_ids(g, q) for q in batch.tolist()]
    g.candidates_examined.add(sum(len(c) for c in candidates))

    workers = policy.workers_per_point(len(batch))

    def scan(worker: int) -> None:
        evaluated = 0
        for q, cands in zip(batch.tolist(), candidates):
            share = _stripe(cands, worker, workers, policy.striping)
            if len(share) == 0:
                continue

            rows, distances, count = short_circuit_distances(points[share], points[q], eps, chunk)
            evaluated += count
            buffer.append(q, share[rows], distances)
        g.dimensions_evaluated.add(evaluated)

    if threads <= 1 or workers == 1:
        for worker in range(workers):
            scan(worker)
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            for future in [executor.submit(scan, w) for w in range(workers)]:
                future.result()

    return buffer


@dataclass(frozen=True)
class NeighborList:
    ids: np.ndarray
    distances: np.ndarray
    status: QueryStatus


def filter_keys(buffer: JoinPairBuffer, k: int) -> Dict[int, NeighborList]:
    """
    Keeps the K nearest non-self neighbors of every query of the batch, in
    (distance, id) order. A query with fewer than K is marked failed and its
    partial list is dropped.
    """
    keys, neighbors, distances = buffer.entries()

    not_self = neighbors != keys
    keys, neighbors, distances = keys[not_self], neighbors[not_self], distances[not_self]

    order = np.lexsort((neighbors, distances, keys))
    keys, neighbors, distances = keys[order], neighbors[order], distances[order]

    starts = np.searchsorted(keys, buffer.query_ids, side="left")
    ends = np.searchsorted(keys, buffer.query_ids, side="right")

    empty_ids = np.empty(0, dtype=np.int64)
    empty_distances = np.empty(0, dtype=np.float64)

    filtered = {}
    for q, start, end in zip(buffer.query_ids.tolist(), starts.tolist(), ends.tolist()):
        if end - start >= k:
            filtered[q] = NeighborList(
                neighbors[start : start + k], distances[start : start + k], QueryStatus.SOLVED
            )
        else:
            filtered[q] = NeighborList(empty_ids, empty_distances, QueryStatus.FAILED)

    return filtered


@dataclass
class DenseJoinOutcome:
    query_ids: np.ndarray
    neighbor_ids: np.ndarray
    distances: np.ndarray
    failed: np.ndarray
    t2: Optional[float]
    busy: float
    batches: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def solved_count(self) -> int:
        return len(self.query_ids)


class _StageFailure:
    def __init__(self, error: BaseException) -> None:
        self.error = error


_DONE = object()


def _empty_outcome(k: int) -> DenseJoinOutcome:
    return DenseJoinOutcome(
        query_ids=np.empty(0, dtype=np.int64),
        neighbor_ids=np.empty((0, k), dtype=np.int64),
        distances=np.empty((0, k), dtype=np.float64),
        failed=np.empty(0, dtype=np.int64),
        t2=None,
        busy=0.0,
    )


def run_dense_join(
    g: GridIndex,
    q_gpu: np.ndarray,
    eps: float,
    k: int,
    policy: GranularityPolicy,
    plan: BatchPlan,
    threads: int = 1,
    chunk: int = 8,
) -> DenseJoinOutcome:
    """
    Executes every batch of the plan through a kernel -> filter -> emit
    pipeline with at most three batches in flight, so the filtering of
    batch b overlaps the kernel of batch b + 1.
    """
    if len(q_gpu) == 0 or plan.n_batches == 0:
        return _empty_outcome(k)

    in_flight = threading.Semaphore(PIPELINE_DEPTH)
    stop = threading.Event()
    kernel_out: "queue.Queue[Any]" = queue.Queue()
    filter_out: "queue.Queue[Any]" = queue.Queue()

    def kernel_stage() -> None:
        try:
            for b, batch in enumerate(plan.query_ranges):
                in_flight.acquire()
                if stop.is_set():
                    in_flight.release()
                    break

                started = time.perf_counter()
                try:
                    buffer = execute_batch(
                        g, batch, eps, policy, plan.buffer_size, b, threads, chunk
                    )
                except Exception as e:
                    kernel_out.put(_StageFailure(e))
                    break
                kernel_out.put((b, buffer, time.perf_counter() - started))
        finally:
            kernel_out.put(_DONE)

    def filter_stage() -> None:
        failed = False
        while True:
            item = kernel_out.get()
            if item is _DONE:
                filter_out.put(_DONE)
                return

            if failed or isinstance(item, _StageFailure):
                failed = True
                filter_out.put(item)
                continue

            b, buffer, kernel_seconds = item
            started = time.perf_counter()
            try:
                filtered = filter_keys(buffer, k)
            except Exception as e:
                failed = True
                filter_out.put(_StageFailure(e))
                continue
            filter_out.put((b, len(buffer), filtered, kernel_seconds, time.perf_counter() - started))

    stages = [
        threading.Thread(target=kernel_stage, name="dense-kernel", daemon=True),
        threading.Thread(target=filter_stage, name="dense-filter", daemon=True),
    ]
    for stage in stages:
        stage.start()

    first_error: Optional[BaseException] = None
    solved: Dict[int, NeighborList] = {}
    failed: List[int] = []
    batches: List[Dict[str, Any]] = []
    busy = 0.0

    while True:
        item = filter_out.get()
        if item is _DONE:
            break

        in_flight.release()

        if isinstance(item, _StageFailure):
            stop.set()
            if first_error is None:
                first_error = item.error
            continue
        if first_error is not None:
            continue

        b, pairs, filtered, kernel_seconds, filter_seconds = item
        batch_failed = 0
        for q, neighbors in filtered.items():
            if neighbors.status == QueryStatus.SOLVED:
                solved[q] = neighbors
            else:
                failed.append(q)
                batch_failed += 1

        busy += kernel_seconds + filter_seconds
        batches.append(
            {
                "batch": b,
                "queries": len(plan.query_ranges[b]),
                "pairs": pairs,
                "workers_per_point": policy.workers_per_point(len(plan.query_ranges[b])),
                "solved": len(filtered) - batch_failed,
                "failed": batch_failed,
                "kernel_seconds": kernel_seconds,
                "filter_seconds": filter_seconds,
            }
        )
        logging.info(f"dense batch finished | {batches[-1]}")

    for stage in stages:
        stage.join()

    if first_error is not None:
        raise first_error

    query_ids = np.array(sorted(solved), dtype=np.int64)
    if len(query_ids) == 0:
        neighbor_ids = np.empty((0, k), dtype=np.int64)
        distances = np.empty((0, k), dtype=np.float64)
    else:
        neighbor_ids = np.vstack([solved[q].ids for q in query_ids.tolist()]).reshape(-1, k)
        distances = np.vstack([solved[q].distances for q in query_ids.tolist()]).reshape(-1, k)

    t2 = busy / len(query_ids) if len(query_ids) > 0 else None

    return DenseJoinOutcome(
        query_ids=query_ids,
        neighbor_ids=neighbor_ids,
        distances=distances,
        failed=np.array(sorted(failed), dtype=np.int64),
        t2=t2,
        busy=busy,
        batches=sorted(batches, key=lambda s: s["batch"]),
    )


def _distance_block(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Distances from each query row to every point, one dimension at a time."""
    accumulated = np.zeros((len(queries), points.shape[0]), dtype=np.float64)
    for j in range(points.shape[1]):
        diff = points[None, :, j] - points[queries, j][:, None]
        accumulated = accumulated + diff * diff
    return np.sqrt(accumulated)


def brute_force_join(d: Dataset, eps: float) -> np.ndarray:
    """Linear all-pairs eps-join: neighbors within eps per point, self included."""
    points = d.metric_points
    counts = np.zeros(d.size, dtype=np.int64)

    for start in range(0, d.size, ORACLE_BLOCK):
        queries = np.arange(start, min(start + ORACLE_BLOCK, d.size))
        distances = _distance_block(points, queries)
        counts[queries] = (distances <= eps).sum(axis=1)

    return counts


def brute_force_knn(
    d: Dataset, k: int, query_ids: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact KNN by sorting every distance of every query in (distance, id)
    order. K is clamped to |D| - 1.
    """
    if query_ids is None:
        query_ids = np.arange(d.size, dtype=np.int64)
    query_ids = np.unique(np.asarray(query_ids, dtype=np.int64))
    k = min(k, d.size - 1)

    points = d.metric_points
    ids = np.arange(d.size, dtype=np.int64)
    neighbor_ids = np.empty((len(query_ids), k), dtype=np.int64)
    distances = np.empty((len(query_ids), k), dtype=np.float64)

    for start in range(0, len(query_ids), ORACLE_BLOCK):
        queries = query_ids[start : start + ORACLE_BLOCK]
        block = _distance_block(points, queries)
        block[np.arange(len(queries)), queries] = np.inf

        order = np.lexsort((np.broadcast_to(ids, block.shape), block), axis=-1)[:, :k]
        neighbor_ids[start : start + len(queries)] = order
        distances[start : start + len(queries)] = np.take_along_axis(block, order, axis=1)

    return query_ids, neighbor_ids, distances
