from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lib.errors import UsageError

PointId = int
NeighborIds = np.ndarray
NeighborDistances = np.ndarray


class EngineMode(str, Enum):
    HYBRID = "hybrid"
    SPARSE_ONLY = "sparse"
    DENSE_ONLY = "dense"
    BRUTE_ORACLE = "oracle"


class Provenance(str, Enum):
    DENSE = "dense"
    SPARSE = "sparse"
    DENSE_FAILED_THEN_SPARSE = "dense_failed_then_sparse"
    ORACLE = "oracle"


class QueryStatus(str, Enum):
    SOLVED = "solved"
    FAILED = "failed"


@dataclass(frozen=True)
class DistanceOutcome:
    within: bool
    threshold: float
    distance: Optional[float] = None

    @staticmethod
    def Within(distance: float, threshold: float) -> "DistanceOutcome":
        return DistanceOutcome(within=True, threshold=threshold, distance=distance)

    @staticmethod
    def Exceeded(threshold: float) -> "DistanceOutcome":
        return DistanceOutcome(within=False, threshold=threshold)


@dataclass(frozen=True)
class CellCoord:
    coords: Tuple[int, ...]
    linear_id: int


TSTATIC = "tstatic"
TDYNAMIC = "tdynamic"
INTERLEAVED = "interleaved"
CONTIGUOUS = "contiguous"


@dataclass(frozen=True)
class GranularityPolicy:
    """
    How many workers share the candidate scan of one query point.

    `tstatic` uses `value` workers for every point; `tdynamic` treats `value`
    as a lower bound on the total number of workers for a batch and divides
    it evenly among the batch's query points.
    """

    mode: str = TSTATIC
    value: int = 8
    striping: str = INTERLEAVED

    def __post_init__(self) -> None:
        if self.mode not in (TSTATIC, TDYNAMIC):
            raise UsageError(f"unknown granularity mode `{self.mode}`")
        if self.value < 1:
            raise UsageError("granularity policy needs at least one worker")
        if self.striping not in (INTERLEAVED, CONTIGUOUS):
            raise UsageError(f"unknown striping `{self.striping}`")

    @staticmethod
    def TStatic(threads_per_point: int) -> "GranularityPolicy":
        return GranularityPolicy(TSTATIC, threads_per_point)

    @staticmethod
    def TDynamic(min_total_threads: int) -> "GranularityPolicy":
        return GranularityPolicy(TDYNAMIC, min_total_threads)

    @staticmethod
    def parse(text: str) -> "GranularityPolicy":
        try:
            mode, value = text.strip().lower().split(":")
            return GranularityPolicy(mode, int(value))
        except ValueError as e:
            raise UsageError(
                f"policy must look like tstatic:W or tdynamic:T, got `{text}`"
            ) from e

    def workers_per_point(self, batch_size: int) -> int:
        if self.mode == TSTATIC:
            return self.value
        if batch_size == 0:
            return 1
        return max(1, self.value // batch_size)

    def __str__(self) -> str:
        return f"{self.mode}:{self.value}"


@dataclass(frozen=True)
class RunConfig:
    k: int = 5
    m: Optional[int] = None
    beta: float = 0.0
    gamma: float = 0.0
    rho: float = 0.0
    policy: GranularityPolicy = GranularityPolicy()
    buffer_size: int = 10**6
    n_bins: int = 100
    histogram_fraction: float = 0.01
    histogram_floor: int = 100
    batch_sample_fraction: float = 0.01
    batch_sample_floor: int = 100
    batch_safety_margin: float = 0.25
    eps_mean_pairs: Optional[int] = None
    seed: int = 0
    workers: int = 4
    kernel_threads: int = 4
    bucket_capacity: int = 16
    duplicate_index: bool = False
    engine_mode: EngineMode = EngineMode.HYBRID
    eps_override: Optional[float] = None
    n_batches_override: Optional[int] = None
    oracle_cap: int = 5000
    short_circuit_chunk: int = 8

    def validate(self, n: int) -> None:
        if self.k < 1:
            raise UsageError("k must be >= 1")

        for name in ["beta", "gamma", "rho"]:
            value = getattr(self, name)
            if value < 0.0 or value > 1.0:
                raise UsageError(f"{name} must be >= 0.0 and <= 1.0")

        for name in ["histogram_fraction", "batch_sample_fraction"]:
            value = getattr(self, name)
            if value <= 0.0 or value > 1.0:
                raise UsageError(f"{name} must be > 0.0 and <= 1.0")

        if self.m is not None and (self.m < 1 or self.m > n):
            raise UsageError(f"m must be between 1 and {n}, got {self.m}")

        for name in ["buffer_size", "n_bins", "workers", "kernel_threads", "bucket_capacity"]:
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")

        if self.batch_safety_margin < 0:
            raise UsageError("batch_safety_margin must be >= 0")

        if self.eps_override is not None and self.eps_override <= 0:
            raise UsageError("eps_override must be > 0")

        if self.n_batches_override is not None and self.n_batches_override < 1:
            raise UsageError("n_batches_override must be >= 1")

    def indexed_dims(self, n: int) -> int:
        if self.m is None:
            return min(6, n)
        return self.m

    def with_params(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)

    def describe_json(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "m": self.m,
            "beta": self.beta,
            "gamma": self.gamma,
            "rho": self.rho,
            "policy": str(self.policy),
            "striping": self.policy.striping,
            "buffer_size": self.buffer_size,
            "n_bins": self.n_bins,
            "histogram_fraction": self.histogram_fraction,
            "batch_sample_fraction": self.batch_sample_fraction,
            "batch_safety_margin": self.batch_safety_margin,
            "seed": self.seed,
            "workers": self.workers,
            "kernel_threads": self.kernel_threads,
            "bucket_capacity": self.bucket_capacity,
            "duplicate_index": self.duplicate_index,
            "engine_mode": self.engine_mode.value,
            "eps_override": self.eps_override,
            "n_batches_override": self.n_batches_override,
        }


@dataclass
class RunDiagnostics:
    engine_mode: EngineMode
    eps: Optional[float] = None
    profile: Any = None
    partition: Dict[str, Any] = field(default_factory=dict)
    batch_plan: Dict[str, Any] = field(default_factory=dict)
    batches: List[Dict[str, Any]] = field(default_factory=list)
    failed_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    worker_split_sizes: List[int] = field(default_factory=list)
    t1: Optional[float] = None
    t2: Optional[float] = None
    rho_model: Optional[float] = None
    dense_busy: float = 0.0
    sparse_busy: float = 0.0
    distance_calculations: int = 0
    phase_times: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def realized_imbalance(self) -> float:
        return abs(self.sparse_busy - self.dense_busy)


@dataclass
class KnnResult:
    """
    Neighbor lists for every queried point, rows aligned with `query_ids`
    (ascending). Each row holds `k` neighbors in canonical (distance, id)
    order, where `k` is the requested K clamped to |D| - 1.
    """

    query_ids: np.ndarray
    neighbor_ids: np.ndarray
    distances: np.ndarray
    provenance: np.ndarray
    k: int
    diagnostics: RunDiagnostics

    def __len__(self) -> int:
        return len(self.query_ids)

    def row_of(self, query_id: int) -> int:
        row = int(np.searchsorted(self.query_ids, query_id))
        if row >= len(self.query_ids) or self.query_ids[row] != query_id:
            raise KeyError(f"point {query_id} was not queried")
        return row

    def neighbors_of(self, query_id: int) -> List[Tuple[int, float]]:
        row = self.row_of(query_id)
        return [
            (int(i), float(d))
            for i, d in zip(self.neighbor_ids[row], self.distances[row])
        ]

    def provenance_counts(self) -> Dict[str, int]:
        counts = {p.value: 0 for p in Provenance}
        values, totals = np.unique(self.provenance, return_counts=True)
        for value, total in zip(values, totals):
            counts[str(value)] = int(total)
        return counts

    def to_frame(self) -> pd.DataFrame:
        q = len(self.query_ids)
        return pd.DataFrame(
            {
                "query_id": np.repeat(self.query_ids, self.k),
                "neighbor_id": self.neighbor_ids.reshape(q * self.k),
                "distance": self.distances.reshape(q * self.k),
            }
        )
