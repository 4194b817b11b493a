import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Tuple

import numpy as np

from lib.errors import UsageError
from lib.types import DistanceOutcome
from lib.utils import is_permutation

# running sums are compared against eps^2 widened by a few ulps, the final
# decision is always sqrt(sum) <= eps
EPS_SQUARED_SLACK = 2.0**-48


@dataclass(frozen=True)
class Dataset:
    """
    Immutable point store. `points` holds the coordinates in the current
    column order, `dim_permutation[j]` is the original dimension stored in
    column j.

    Distances are always accumulated in the original dimension order (see
    `metric_points`), so a reorder never changes a single bit of any
    distance reported by the engines.
    """

    points: np.ndarray
    dim_permutation: np.ndarray = field(default=None)  # type: ignore

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.ndim != 2:
            raise UsageError(f"points must be a 2-D matrix, got shape {points.shape}")
        if points.shape[0] < 1 or points.shape[1] < 1:
            raise UsageError("a dataset needs at least one point and one dimension")
        if not np.isfinite(points).all():
            row, column = np.argwhere(~np.isfinite(points))[0]
            raise UsageError(f"non-finite coordinate at point {row}, dimension {column}")
        points.setflags(write=False)

        permutation = self.dim_permutation
        if permutation is None:
            permutation = np.arange(points.shape[1])
        permutation = np.array(permutation, dtype=np.int64, copy=True)
        if not is_permutation(permutation, points.shape[1]):
            raise UsageError("dim_permutation must be a permutation of the columns")
        permutation.setflags(write=False)

        object.__setattr__(self, "points", points)
        object.__setattr__(self, "dim_permutation", permutation)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def inverse_permutation(self) -> np.ndarray:
        return np.argsort(self.dim_permutation)

    @cached_property
    def metric_points(self) -> np.ndarray:
        if (self.dim_permutation == np.arange(self.n)).all():
            return self.points
        restored = np.ascontiguousarray(self.points[:, self.inverse_permutation])
        restored.setflags(write=False)
        return restored

    def original_points(self) -> np.ndarray:
        return self.metric_points.copy()

    def distance(self, i: int, j: int) -> float:
        return euclidean_distance(self.metric_points[i], self.metric_points[j])

    def variances(self) -> np.ndarray:
        return self.points.var(axis=0)

    def describe_json(self) -> dict:
        return {
            "size": self.size,
            "n": self.n,
            "dim_permutation": self.dim_permutation.tolist(),
            "variances": [float(v) for v in self.variances()],
        }

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Dataset):
            return False
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.dim_permutation, other.dim_permutation)
        )

    def __hash__(self) -> int:
        return hash((self.points.shape, self.points.tobytes()[:64]))


def _check_same_dimension(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise UsageError(
            f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]} coordinates"
        )


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """
    Squared distances from every row of `points` to `query`, summed
    sequentially from the first dimension to the last.
    """
    points = np.atleast_2d(points)
    _check_same_dimension(points, query)
    if points.shape[0] == 0:
        return np.empty(0, dtype=np.float64)

    diff = points - query
    return np.cumsum(diff * diff, axis=1)[:, -1]


def euclidean_distance(a: Any, b: Any) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dimension(a, b)

    return float(np.sqrt(squared_distances(a[None, :], b)[0]))


def short_circuit_distance(a: Any, b: Any, eps: float) -> DistanceOutcome:
    if eps <= 0:
        raise UsageError("eps must be > 0")

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dimension(a, b)

    bound = eps * eps * (1.0 + EPS_SQUARED_SLACK)
    running = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        diff = x - y
        running = running + diff * diff
        if running > bound:
            return DistanceOutcome.Exceeded(eps)

    distance = math.sqrt(running)
    if distance > eps:
        return DistanceOutcome.Exceeded(eps)

    return DistanceOutcome.Within(distance, eps)


def short_circuit_distances(
    points: np.ndarray, query: np.ndarray, eps: float, chunk: int = 8
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Vectorized short-circuit: processes `chunk` dimensions at a time and
    drops the rows whose running sum already exceeds eps^2.

    Returns the row indices within eps, their distances and the number of
    coordinate differences evaluated.
    """
    if eps <= 0:
        raise UsageError("eps must be > 0")

    points = np.atleast_2d(points)
    _check_same_dimension(points, query)

    rows = np.arange(points.shape[0])
    running = np.zeros(points.shape[0], dtype=np.float64)
    bound = eps * eps * (1.0 + EPS_SQUARED_SLACK)
    evaluated = 0

    n = points.shape[1]
    for start in range(0, n, chunk):
        if len(rows) == 0:
            break

        stop = min(start + chunk, n)
        diff = points[rows, start:stop] - query[start:stop]
        # the running sum rides along as the first column so the
        # accumulation order matches `squared_distances` exactly
        terms = np.hstack([running[:, None], diff * diff])
        running = np.cumsum(terms, axis=1)[:, -1]
        evaluated += diff.size

        keep = running <= bound
        rows = rows[keep]
        running = running[keep]

    distances = np.sqrt(running)
    within = distances <= eps
    return rows[within], distances[within], evaluated


def reorder_by_variance(d: Dataset, m: int) -> Dataset:
    if m < 1 or m > d.n:
        raise UsageError(f"m must be between 1 and {d.n}, got {m}")

    variances = d.variances()
    # descending variance, ties by lower original dimension
    order = np.lexsort((d.dim_permutation, -variances))

    return Dataset(
        points=d.points[:, order],
        dim_permutation=d.dim_permutation[order],
    )
