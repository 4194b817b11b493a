import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from lib.core import Dataset
from lib.errors import UsageError
from lib.utils import round_robin

DEFAULT_BUCKET_CAPACITY = 16
LEAF = -1


@dataclass(frozen=True)
class KdTree:
    """
    Array-backed kd-tree over all n dimensions. Node i splits on
    `split_dim[i]` at `split_value[i]`: points <= value go left, points
    > value go right. Leaves (split_dim == -1) own the slice
    [start, end) of `order`. `lo`/`hi` hold every node's bounding box.
    """

    split_dim: np.ndarray
    split_value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    end: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    order: np.ndarray
    leaf_points: np.ndarray
    bucket_capacity: int
    dataset: Dataset

    @property
    def n_nodes(self) -> int:
        return len(self.split_dim)

    def is_leaf(self, node: int) -> bool:
        return self.split_dim[node] == LEAF

    def leaves(self) -> List[int]:
        return [i for i in range(self.n_nodes) if self.is_leaf(i)]

    def depth(self, node: int = 0) -> int:
        if self.is_leaf(node):
            return 0
        return 1 + max(self.depth(int(self.left[node])), self.depth(int(self.right[node])))


def build_kdtree(d: Dataset, bucket_capacity: int = DEFAULT_BUCKET_CAPACITY) -> KdTree:
    """Median split on the widest-spread dimension, lowest dimension on ties."""
    if bucket_capacity < 1:
        raise UsageError("bucket_capacity must be >= 1")

    points = d.metric_points
    nodes: List[Dict[str, Any]] = []
    order_parts: List[np.ndarray] = []
    cursor = [0]

    def build(ids: np.ndarray) -> int:
        node = len(nodes)
        box = points[ids]
        nodes.append(
            {
                "split_dim": LEAF,
                "split_value": 0.0,
                "left": LEAF,
                "right": LEAF,
                "start": 0,
                "end": 0,
                "lo": box.min(axis=0),
                "hi": box.max(axis=0),
            }
        )

        spread = nodes[node]["hi"] - nodes[node]["lo"]
        if len(ids) <= bucket_capacity or spread.max() == 0:
            nodes[node]["start"] = cursor[0]
            nodes[node]["end"] = cursor[0] + len(ids)
            cursor[0] += len(ids)
            order_parts.append(ids)
            return node

        dim = int(np.argmax(spread))
        values = np.sort(box[:, dim])
        split = values[(len(values) - 1) // 2]
        if split == values[-1]:
            split = values[values < values[-1]][-1]

        goes_left = box[:, dim] <= split
        nodes[node]["split_dim"] = dim
        nodes[node]["split_value"] = float(split)
        nodes[node]["left"] = build(ids[goes_left])
        nodes[node]["right"] = build(ids[~goes_left])
        return node

    build(np.arange(d.size, dtype=np.int64))

    order = np.concatenate(order_parts).astype(np.int64)
    return KdTree(
        split_dim=np.array([n["split_dim"] for n in nodes], dtype=np.int64),
        split_value=np.array([n["split_value"] for n in nodes], dtype=np.float64),
        left=np.array([n["left"] for n in nodes], dtype=np.int64),
        right=np.array([n["right"] for n in nodes], dtype=np.int64),
        start=np.array([n["start"] for n in nodes], dtype=np.int64),
        end=np.array([n["end"] for n in nodes], dtype=np.int64),
        lo=np.vstack([n["lo"] for n in nodes]),
        hi=np.vstack([n["hi"] for n in nodes]),
        order=order,
        leaf_points=np.ascontiguousarray(points[order]),
        bucket_capacity=bucket_capacity,
        dataset=d,
    )


def _box_distance(t: KdTree, node: int, query: np.ndarray) -> float:
    gap = np.maximum(np.maximum(t.lo[node] - query, query - t.hi[node]), 0.0)
    return float(np.sqrt(np.cumsum(gap * gap)[-1]))


def knn_query(t: KdTree, q: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact K nearest neighbors of point `q`, itself excluded, in (distance,
    id) order. Subtrees whose box is farther than the current K-th best
    distance are pruned; ties at the K-th distance are still visited so the
    lower id wins.
    """
    if k < 1:
        raise UsageError("k must be >= 1")

    k = min(k, t.dataset.size - 1)
    best_ids = np.empty(0, dtype=np.int64)
    best_distances = np.empty(0, dtype=np.float64)
    if k == 0:
        return best_ids, best_distances

    query = t.dataset.metric_points[q]

    def kth() -> float:
        return best_distances[-1] if len(best_distances) == k else np.inf

    def visit(node: int) -> None:
        nonlocal best_ids, best_distances

        if t.is_leaf(node):
            start, end = int(t.start[node]), int(t.end[node])
            ids = t.order[start:end]
            diff = t.leaf_points[start:end] - query
            distances = np.sqrt(np.cumsum(diff * diff, axis=1)[:, -1])

            keep = ids != q
            ids = np.concatenate([best_ids, ids[keep]])
            distances = np.concatenate([best_distances, distances[keep]])
            order = np.lexsort((ids, distances))[:k]
            best_ids, best_distances = ids[order], distances[order]
            return

        dim = int(t.split_dim[node])
        if query[dim] <= t.split_value[node]:
            near, far = int(t.left[node]), int(t.right[node])
        else:
            near, far = int(t.right[node]), int(t.left[node])

        for child in (near, far):
            if _box_distance(t, child, query) <= kth():
                visit(child)

    visit(0)
    return best_ids, best_distances


@dataclass
class SparseKnnOutcome:
    query_ids: np.ndarray
    neighbor_ids: np.ndarray
    distances: np.ndarray
    t1: Optional[float]
    busy: float
    worker_split_sizes: List[int] = field(default_factory=list)
    worker_busy: List[float] = field(default_factory=list)
    build_seconds: float = 0.0


def run_sparse_knn(
    d: Dataset,
    queries: np.ndarray,
    k: int,
    workers: int,
    tree: Optional[KdTree] = None,
    bucket_capacity: int = DEFAULT_BUCKET_CAPACITY,
    duplicate_index: bool = False,
) -> SparseKnnOutcome:
    """
    Solves `queries` on a pool of `workers`. The i-th query (ascending id)
    goes to worker i mod workers. Each worker writes into its own rows of
    the result. With `duplicate_index` every worker builds its own tree of
    the full dataset; otherwise they share one.
    """
    if workers < 1:
        raise UsageError("workers must be >= 1")

    queries = np.unique(np.asarray(queries, dtype=np.int64))
    k = min(k, d.size - 1)

    neighbor_ids = np.empty((len(queries), k), dtype=np.int64)
    distances = np.empty((len(queries), k), dtype=np.float64)
    if len(queries) == 0:
        return SparseKnnOutcome(queries, neighbor_ids, distances, None, 0.0, [0] * workers, [0.0] * workers)

    build_seconds = [0.0] * workers
    if tree is None and not duplicate_index:
        started = time.perf_counter()
        tree = build_kdtree(d, bucket_capacity)
        build_seconds = [time.perf_counter() - started] + [0.0] * (workers - 1)

    rows = round_robin(np.arange(len(queries)), workers)
    worker_busy = [0.0] * workers

    def work(worker: int) -> None:
        own_tree = tree
        if duplicate_index:
            started = time.perf_counter()
            own_tree = build_kdtree(d, bucket_capacity)
            build_seconds[worker] = time.perf_counter() - started

        started = time.perf_counter()
        if k > 0:
            for row in rows[worker].tolist():
                neighbor_ids[row], distances[row] = knn_query(own_tree, int(queries[row]), k)
        worker_busy[worker] = time.perf_counter() - started

    if workers == 1:
        work(0)
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            for future in [executor.submit(work, w) for w in range(workers)]:
                future.result()

    busy = sum(worker_busy)
    split_sizes = [len(r) for r in rows]

    log_fields = {
        "queries": len(queries),
        "workers": workers,
        "split_sizes": split_sizes,
        "busy_seconds": round(busy, 6),
    }
    logging.info(f"sparse knn finished | {log_fields}")

    return SparseKnnOutcome(
        query_ids=queries,
        neighbor_ids=neighbor_ids,
        distances=distances,
        t1=busy / len(queries),
        busy=busy,
        worker_split_sizes=split_sizes,
        worker_busy=worker_busy,
        build_seconds=max(build_seconds),
    )
