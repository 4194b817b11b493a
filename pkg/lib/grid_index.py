import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Tuple

import numpy as np

from lib.core import Dataset, short_circuit_distances
from lib.errors import IndexingError, UsageError
from lib.types import CellCoord
from lib.utils import AtomicCounter

MAX_LINEAR_ID = 2**63 - 1
# relative widening of the neighbor reach, far above the rounding error of
# one subtraction and one division
REACH_SLACK = 2.0**-40


@lru_cache(maxsize=None)
def adjacent_offsets(m: int) -> np.ndarray:
    """All 3^m offsets in {-1, 0, 1}^m, the query cell included."""
    return np.array(list(itertools.product((-1, 0, 1), repeat=m)), dtype=np.int64)


@dataclass(frozen=True)
class GridIndex:
    """
    Epsilon grid over the first `m` columns of an already reordered dataset,
    storing only non-empty cells:

        B: sorted linear ids of the non-empty cells
        G: per non-empty cell, the half-open range [start, end) into A
        A: point ids grouped by cell, ascending id inside a cell
    """

    eps: float
    m: int
    mins: np.ndarray
    maxs: np.ndarray
    cells_per_dim: np.ndarray
    strides: np.ndarray
    B: np.ndarray
    G: np.ndarray
    A: np.ndarray
    point_cells: np.ndarray
    dataset: Dataset
    candidates_examined: AtomicCounter = field(
        default_factory=AtomicCounter, compare=False, repr=False
    )
    dimensions_evaluated: AtomicCounter = field(
        default_factory=AtomicCounter, compare=False, repr=False
    )

    @property
    def n_cells(self) -> int:
        return len(self.B)

    def cell_populations(self) -> np.ndarray:
        return self.G[:, 1] - self.G[:, 0]

    def point_populations(self) -> np.ndarray:
        """Population of the cell of every point, indexed by point id."""
        cell_rank = np.searchsorted(self.B, self.point_cells)
        return self.cell_populations()[cell_rank]

    def describe_json(self) -> Dict[str, Any]:
        populations = self.cell_populations()
        return {
            "eps": self.eps,
            "m": self.m,
            "cells_per_dim": self.cells_per_dim.tolist(),
            "non_empty_cells": self.n_cells,
            "max_cell_population": int(populations.max()),
            "mean_cell_population": float(populations.mean()),
        }


def _linearize(coords: np.ndarray, strides: np.ndarray) -> np.ndarray:
    return coords @ strides


def _cell_coords(g_mins: np.ndarray, eps: float, cells_per_dim: np.ndarray, values: np.ndarray) -> np.ndarray:
    coords = np.floor((values - g_mins) / eps).astype(np.int64)
    # points on the upper face of the grid stay in the last cell
    return np.clip(coords, 0, cells_per_dim - 1)


def build_index(d: Dataset, m: int, eps: float) -> GridIndex:
    if eps <= 0:
        raise UsageError("eps must be > 0")
    if m < 1 or m > d.n:
        raise UsageError(f"m must be between 1 and {d.n}, got {m}")

    indexed = d.points[:, :m]
    mins = indexed.min(axis=0)
    maxs = indexed.max(axis=0)

    extent = np.floor((maxs - mins) / eps) + 1
    if not np.isfinite(extent).all() or (extent > MAX_LINEAR_ID).any():
        raise IndexingError([e if np.isfinite(e) else MAX_LINEAR_ID for e in extent])

    cells_per_dim = extent.astype(np.int64)
    total_cells = math.prod(int(c) for c in cells_per_dim)
    if total_cells > MAX_LINEAR_ID:
        raise IndexingError(cells_per_dim.tolist())

    # row-major: the last indexed dimension varies fastest
    strides = np.ones(m, dtype=np.int64)
    for j in range(m - 2, -1, -1):
        strides[j] = strides[j + 1] * cells_per_dim[j + 1]

    coords = _cell_coords(mins, eps, cells_per_dim, indexed)
    point_cells = _linearize(coords, strides)

    ids = np.arange(d.size, dtype=np.int64)
    A = np.lexsort((ids, point_cells)).astype(np.int64)
    B, starts, counts = np.unique(point_cells[A], return_index=True, return_counts=True)
    G = np.column_stack([starts, starts + counts]).astype(np.int64)

    for array in (mins, maxs, cells_per_dim, strides, B, G, A, point_cells):
        array.setflags(write=False)

    log_fields = {
        "eps": eps,
        "m": m,
        "non_empty_cells": len(B),
        "points": d.size,
    }
    logging.info(f"grid index built | {log_fields}")

    return GridIndex(
        eps=float(eps),
        m=m,
        mins=mins,
        maxs=maxs,
        cells_per_dim=cells_per_dim,
        strides=strides,
        B=B,
        G=G,
        A=A,
        point_cells=point_cells,
        dataset=d,
    )


def query_cell_of(g: GridIndex, p: Any) -> CellCoord:
    values = np.asarray(p, dtype=np.float64)[: g.m]
    coords = _cell_coords(g.mins, g.eps, g.cells_per_dim, values[None, :])[0]
    return CellCoord(
        coords=tuple(int(c) for c in coords),
        linear_id=int(_linearize(coords, g.strides)),
    )


def delinearize(g: GridIndex, linear_id: int) -> Tuple[int, ...]:
    coords = []
    for stride in g.strides.tolist():
        coords.append(linear_id // stride)
        linear_id %= stride
    return tuple(int(c) for c in coords)


def cell_box(g: GridIndex, cell: CellCoord) -> Tuple[np.ndarray, np.ndarray]:
    """Clamped box of a cell: the last cell stretches to cover the data max."""
    coords = np.asarray(cell.coords, dtype=np.float64)
    low = g.mins + coords * g.eps
    high = np.where(
        coords == g.cells_per_dim - 1,
        np.maximum(low + g.eps, g.maxs),
        low + g.eps,
    )
    return low, high


def neighbor_cells(g: GridIndex, q: int) -> np.ndarray:
    """
    Coordinates of the in-grid cells to visit for point `q`: the 3^m block
    around its cell, widened in the rare case where rounding puts a point
    within eps of `q` two cells away.
    """
    cell = np.asarray(delinearize(g, int(g.point_cells[q])), dtype=np.int64)
    values = g.dataset.points[q, : g.m]
    reach = g.eps * (1.0 + REACH_SLACK)

    low = np.minimum(_cell_coords(g.mins, g.eps, g.cells_per_dim, values - reach), cell - 1)
    high = np.maximum(_cell_coords(g.mins, g.eps, g.cells_per_dim, values + reach), cell + 1)
    low = np.maximum(low, 0)
    high = np.minimum(high, g.cells_per_dim - 1)

    if ((low >= cell - 1) & (high <= cell + 1)).all():
        neighbors = cell + adjacent_offsets(g.m)
        inside = ((neighbors >= low) & (neighbors <= high)).all(axis=1)
        return neighbors[inside]

    axes = [np.arange(lo, hi + 1) for lo, hi in zip(low.tolist(), high.tolist())]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g.m)


def candidate_ids(g: GridIndex, q: int) -> np.ndarray:
    """
    Point ids stored in the cells around point `q`, found with a binary
    search over B per linearized neighbor id.
    """
    linear = np.sort(_linearize(neighbor_cells(g, q), g.strides))

    rank = np.searchsorted(g.B, linear)
    valid = rank < len(g.B)
    rank, linear = rank[valid], linear[valid]
    found = rank[g.B[rank] == linear]
    if len(found) == 0:
        return np.empty(0, dtype=np.int64)

    return np.concatenate([g.A[start:end] for start, end in g.G[found]])


def range_query(
    g: GridIndex, q: int, eps: float, chunk: int = 8
) -> Tuple[np.ndarray, np.ndarray]:
    """
    All points within eps of point `q` (itself included), as neighbor ids in
    ascending order and their distances. Candidates come from the m indexed
    dimensions, the filter uses all n coordinates.
    """
    if eps != g.eps:
        raise UsageError(f"range query eps {eps} differs from the index eps {g.eps}")

    candidates = candidate_ids(g, q)
    g.candidates_examined.add(len(candidates))

    points = g.dataset.metric_points
    rows, distances, evaluated = short_circuit_distances(
        points[candidates], points[q], eps, chunk
    )
    g.dimensions_evaluated.add(evaluated)

    ids = candidates[rows]
    order = np.argsort(ids, kind="stable")
    return ids[order], distances[order]
