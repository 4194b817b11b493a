import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lib.core import Dataset, reorder_by_variance
from lib.dense_engine import brute_force_knn, estimate_batches, run_dense_join
from lib.epsilon import select_epsilon
from lib.errors import (
    DegenerateProfileError,
    IndexingError,
    OracleCapError,
    RunError,
    SampleTooSmallError,
    TargetUnreachableError,
    UsageError,
)
from lib.grid_index import build_index
from lib.partitioner import LoadBalanceObservation, split_work
from lib.sparse_engine import build_kdtree, run_sparse_knn
from lib.types import EngineMode, KnnResult, Provenance, RunConfig, RunDiagnostics
from lib.utils import ceil_fraction, derive_seeds

SEARCH_SAMPLE_FLOOR = 50
DEFAULT_SEARCH_CANDIDATES = [(0.0, 0.0), (0.0, 0.8), (1.0, 0.0), (1.0, 0.8)]
DEFAULT_SEARCH_RHO = 0.5

# errors a parameter candidate may raise without aborting the search
CANDIDATE_ERRORS = (TargetUnreachableError, DegenerateProfileError, IndexingError)


class _PhaseTimer:
    def __init__(self) -> None:
        self.times: Dict[str, float] = {}
        self._started = time.perf_counter()

    def mark(self, phase: str) -> None:
        now = time.perf_counter()
        self.times[phase] = now - self._started
        self._started = now

    def total(self, excluded: List[str]) -> float:
        return sum(v for name, v in self.times.items() if name not in excluded)


def _resolve_queries(d: Dataset, query_ids: Optional[np.ndarray]) -> np.ndarray:
    if query_ids is None:
        return np.arange(d.size, dtype=np.int64)

    query_ids = np.unique(np.asarray(query_ids, dtype=np.int64))
    if len(query_ids) == 0 or query_ids[0] < 0 or query_ids[-1] >= d.size:
        raise UsageError("query ids must be valid point ids")
    return query_ids


def _clamp_k(k: int, size: int, warnings: List[str]) -> int:
    if k >= size:
        message = f"k={k} is not below |D|={size}, clamped to {size - 1}"
        logging.warning(message)
        warnings.append(message)
        return size - 1
    return k


def _empty_result(queries: np.ndarray, diagnostics: RunDiagnostics, provenance: Provenance) -> KnnResult:
    return KnnResult(
        query_ids=queries,
        neighbor_ids=np.empty((len(queries), 0), dtype=np.int64),
        distances=np.empty((len(queries), 0), dtype=np.float64),
        provenance=np.full(len(queries), provenance.value, dtype="<U24"),
        k=0,
        diagnostics=diagnostics,
    )


def run_knn(d: Dataset, cfg: RunConfig, query_ids: Optional[np.ndarray] = None) -> KnnResult:
    if cfg.engine_mode == EngineMode.SPARSE_ONLY:
        return run_sparse_only(d, cfg, query_ids)
    if cfg.engine_mode == EngineMode.BRUTE_ORACLE:
        return run_oracle(d, cfg, query_ids)
    return run_hybrid(d, cfg, query_ids)


def run_hybrid(d: Dataset, cfg: RunConfig, query_ids: Optional[np.ndarray] = None) -> KnnResult:
    """
    Reorder by variance, select eps, build the grid, split the queries,
    run the dense pipeline and the sparse pool concurrently, then hand the
    dense failures to the sparse pool and merge.

    With `engine_mode=dense` every query goes to the dense engine first.
    Index construction is timed but left out of the total.
    """
    cfg.validate(d.n)
    mode = cfg.engine_mode if cfg.engine_mode == EngineMode.DENSE_ONLY else EngineMode.HYBRID
    diagnostics = RunDiagnostics(engine_mode=mode)
    queries = _resolve_queries(d, query_ids)
    k = _clamp_k(cfg.k, d.size, diagnostics.warnings)
    if k == 0:
        return _empty_result(queries, diagnostics, Provenance.SPARSE)

    m = cfg.indexed_dims(d.n)
    seeds = derive_seeds(cfg.seed)
    context = {"k": k, "m": m, "beta": cfg.beta, "gamma": cfg.gamma, "rho": cfg.rho, "mode": mode.value}
    timer = _PhaseTimer()

    reordered = reorder_by_variance(d, m)
    timer.mark("reorder")

    if cfg.eps_override is not None:
        eps = cfg.eps_override
    else:
        try:
            profile = select_epsilon(
                reordered,
                k,
                cfg.beta,
                n_bins=cfg.n_bins,
                query_fraction=cfg.histogram_fraction,
                query_floor=cfg.histogram_floor,
                eps_mean_pairs=cfg.eps_mean_pairs,
                eps_mean_seed=seeds["eps_mean"],
                histogram_seed=seeds["histogram"],
            )
        except (DegenerateProfileError, TargetUnreachableError) as e:
            raise RunError("select_epsilon", context) from e
        diagnostics.profile = profile
        eps = profile.eps_final
    diagnostics.eps = eps
    context["eps"] = eps
    timer.mark("select_epsilon")

    try:
        g = build_index(reordered, m, eps)
    except IndexingError as e:
        raise RunError("build_index", context) from e
    tree = None if cfg.duplicate_index else build_kdtree(reordered, cfg.bucket_capacity)
    timer.mark("build_index")

    partition = split_work(g, k, cfg.beta, cfg.gamma, cfg.rho, queries)
    if mode == EngineMode.DENSE_ONLY:
        partition = replace(
            partition,
            q_gpu=queries,
            q_cpu=np.empty(0, dtype=np.int64),
            demoted=np.empty(0, dtype=np.int64),
        )
    diagnostics.partition = partition.describe_json()
    timer.mark("split_work")

    def dense_phase():
        plan = estimate_batches(
            g,
            partition.q_gpu,
            cfg.batch_sample_fraction,
            cfg.buffer_size,
            seeds["batches"],
            cfg.batch_sample_floor,
            cfg.batch_safety_margin,
            cfg.n_batches_override,
        )
        outcome = run_dense_join(
            g, partition.q_gpu, eps, k, cfg.policy, plan, cfg.kernel_threads, cfg.short_circuit_chunk
        )
        return plan, outcome

    def sparse_phase(ids: np.ndarray):
        return run_sparse_knn(
            reordered,
            ids,
            k,
            cfg.workers,
            tree=tree,
            bucket_capacity=cfg.bucket_capacity,
            duplicate_index=cfg.duplicate_index,
        )

    with ThreadPoolExecutor(max_workers=2) as executor:
        dense_future = executor.submit(dense_phase)
        sparse_future = executor.submit(sparse_phase, partition.q_cpu)
        try:
            plan, dense = dense_future.result()
        except Exception as e:
            sparse_future.result()
            raise RunError("dense_join", context) from e
        sparse = sparse_future.result()
    timer.mark("engines")

    # the sparse pool only finishes once every dense failure is solved
    failed = sparse_phase(dense.failed)
    timer.mark("failed_reassignment")

    rows = np.searchsorted(queries, np.concatenate([dense.query_ids, sparse.query_ids, failed.query_ids]))
    neighbor_ids = np.empty((len(queries), k), dtype=np.int64)
    distances = np.empty((len(queries), k), dtype=np.float64)
    neighbor_ids[rows] = np.vstack([dense.neighbor_ids, sparse.neighbor_ids, failed.neighbor_ids])
    distances[rows] = np.vstack([dense.distances, sparse.distances, failed.distances])

    provenance = np.empty(len(queries), dtype="<U24")
    provenance[np.searchsorted(queries, dense.query_ids)] = Provenance.DENSE.value
    provenance[np.searchsorted(queries, sparse.query_ids)] = Provenance.SPARSE.value
    provenance[np.searchsorted(queries, failed.query_ids)] = Provenance.DENSE_FAILED_THEN_SPARSE.value
    timer.mark("merge")

    sparse_solved = len(sparse.query_ids) + len(failed.query_ids)
    diagnostics.batch_plan = plan.describe_json()
    diagnostics.batches = dense.batches
    diagnostics.failed_ids = dense.failed
    diagnostics.worker_split_sizes = sparse.worker_split_sizes
    diagnostics.dense_busy = dense.busy
    diagnostics.sparse_busy = sparse.busy + failed.busy
    diagnostics.t1 = diagnostics.sparse_busy / sparse_solved if sparse_solved > 0 else None
    diagnostics.t2 = dense.t2
    if diagnostics.t1 and diagnostics.t2:
        diagnostics.rho_model = LoadBalanceObservation(diagnostics.t1, diagnostics.t2).rho_model
    diagnostics.distance_calculations = g.candidates_examined.value
    diagnostics.phase_times = dict(timer.times)
    diagnostics.phase_times["total"] = timer.total(excluded=["build_index"]) - failed.build_seconds

    log_fields = {
        **context,
        "q_gpu": len(partition.q_gpu),
        "q_cpu": len(partition.q_cpu),
        "failed": len(dense.failed),
        "t1": diagnostics.t1,
        "t2": diagnostics.t2,
        "rho_model": diagnostics.rho_model,
        "total_seconds": round(diagnostics.phase_times["total"], 6),
    }
    logging.info(f"hybrid run finished | {log_fields}")

    return KnnResult(
        query_ids=queries,
        neighbor_ids=neighbor_ids,
        distances=distances,
        provenance=provenance,
        k=k,
        diagnostics=diagnostics,
    )


def run_sparse_only(d: Dataset, cfg: RunConfig, query_ids: Optional[np.ndarray] = None) -> KnnResult:
    """Every query on the kd-tree worker pool, no grid and no eps."""
    cfg.validate(d.n)
    diagnostics = RunDiagnostics(engine_mode=EngineMode.SPARSE_ONLY)
    queries = _resolve_queries(d, query_ids)
    k = _clamp_k(cfg.k, d.size, diagnostics.warnings)
    if k == 0:
        return _empty_result(queries, diagnostics, Provenance.SPARSE)

    timer = _PhaseTimer()
    tree = None if cfg.duplicate_index else build_kdtree(d, cfg.bucket_capacity)
    timer.mark("build_index")

    sparse = run_sparse_knn(
        d, queries, k, cfg.workers, tree=tree,
        bucket_capacity=cfg.bucket_capacity, duplicate_index=cfg.duplicate_index,
    )
    timer.mark("engines")

    diagnostics.worker_split_sizes = sparse.worker_split_sizes
    diagnostics.sparse_busy = sparse.busy
    diagnostics.t1 = sparse.t1
    diagnostics.phase_times = dict(timer.times)
    diagnostics.phase_times["total"] = timer.total(excluded=["build_index"]) - sparse.build_seconds

    return KnnResult(
        query_ids=queries,
        neighbor_ids=sparse.neighbor_ids,
        distances=sparse.distances,
        provenance=np.full(len(queries), Provenance.SPARSE.value, dtype="<U24"),
        k=k,
        diagnostics=diagnostics,
    )


def run_oracle(d: Dataset, cfg: RunConfig, query_ids: Optional[np.ndarray] = None) -> KnnResult:
    cfg.validate(d.n)
    diagnostics = RunDiagnostics(engine_mode=EngineMode.BRUTE_ORACLE)
    queries = _resolve_queries(d, query_ids)
    k = _clamp_k(cfg.k, d.size, diagnostics.warnings)

    timer = _PhaseTimer()
    queries, neighbor_ids, distances = brute_force_knn(d, k, queries)
    timer.mark("engines")
    diagnostics.phase_times = dict(timer.times)
    diagnostics.phase_times["total"] = timer.total(excluded=[])

    return KnnResult(
        query_ids=queries,
        neighbor_ids=neighbor_ids,
        distances=distances,
        provenance=np.full(len(queries), Provenance.ORACLE.value, dtype="<U24"),
        k=k,
        diagnostics=diagnostics,
    )


@dataclass
class VerificationReport:
    checked: int
    k: int
    mismatched_ids: List[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return len(self.mismatched_ids) == 0

    def describe_json(self) -> Dict[str, Any]:
        return {
            "checked": self.checked,
            "k": self.k,
            "mismatches": len(self.mismatched_ids),
            "mismatched_ids": self.mismatched_ids[:100],
        }


def verify_against_oracle(
    result: KnnResult, d: Dataset, k: int, oracle_cap: int = 5000
) -> VerificationReport:
    if d.size > oracle_cap:
        raise OracleCapError(d.size, oracle_cap)

    queries, neighbor_ids, distances = brute_force_knn(d, k, result.query_ids)
    expected_k = neighbor_ids.shape[1]

    if result.k != expected_k or not np.array_equal(queries, result.query_ids):
        return VerificationReport(len(queries), expected_k, queries.tolist())

    same = (result.neighbor_ids == neighbor_ids).all(axis=1)
    same &= (result.distances == distances).all(axis=1)
    mismatched = queries[~same].tolist()

    log_fields = {"checked": len(queries), "k": expected_k, "mismatches": len(mismatched)}
    logging.info(f"oracle verification | {log_fields}")

    return VerificationReport(len(queries), expected_k, mismatched)


@dataclass
class SearchOutcome:
    beta: float
    gamma: float
    t1: Optional[float]
    t2: Optional[float]
    rho_model: Optional[float]
    candidates: pd.DataFrame

    def describe_json(self) -> Dict[str, Any]:
        return {
            "beta": self.beta,
            "gamma": self.gamma,
            "t1": self.t1,
            "t2": self.t2,
            "rho_model": self.rho_model,
        }


def parameter_search(
    d: Dataset,
    k: int,
    f: float,
    candidates: Optional[List[Tuple[float, float]]] = None,
    cfg: Optional[RunConfig] = None,
) -> SearchOutcome:
    """
    Runs the hybrid join on a seeded f-fraction of the queries for every
    (beta, gamma) candidate and keeps the fastest one. Its T1 and T2 give
    the rho for the full run.
    """
    if f <= 0 or f > 1:
        raise UsageError("f must be > 0.0 and <= 1.0")
    if candidates is None:
        candidates = DEFAULT_SEARCH_CANDIDATES
    if len(candidates) == 0:
        raise UsageError("parameter search needs at least one candidate")
    if cfg is None:
        cfg = RunConfig(rho=DEFAULT_SEARCH_RHO)
    cfg = cfg.with_params(k=k, engine_mode=EngineMode.HYBRID)

    sample_size = ceil_fraction(f, d.size)
    if sample_size < SEARCH_SAMPLE_FLOOR:
        raise SampleTooSmallError(sample_size, SEARCH_SAMPLE_FLOOR)

    rng = np.random.default_rng(derive_seeds(cfg.seed)["search"])
    sample = np.sort(rng.choice(d.size, size=sample_size, replace=False))

    rows = []
    last_error: Optional[BaseException] = None
    for beta, gamma in candidates:
        log_fields = {"beta": beta, "gamma": gamma, "rho": cfg.rho, "sample_size": sample_size}
        try:
            result = run_hybrid(d, cfg.with_params(beta=beta, gamma=gamma), sample)
        except RunError as e:
            if not isinstance(e.__cause__, CANDIDATE_ERRORS):
                raise
            logging.warning(f"search candidate skipped: {e.__cause__} | {log_fields}")
            last_error = e
            continue

        diagnostics = result.diagnostics
        rows.append(
            {
                "beta": beta,
                "gamma": gamma,
                "wall_seconds": diagnostics.phase_times["total"],
                "t1": diagnostics.t1,
                "t2": diagnostics.t2,
                "failed": len(diagnostics.failed_ids),
                "q_gpu": diagnostics.partition["q_gpu"],
                "q_cpu": diagnostics.partition["q_cpu"],
            }
        )
        logging.info(f"search candidate finished | {rows[-1]}")

    if len(rows) == 0:
        assert last_error is not None
        raise last_error

    table = pd.DataFrame(rows)
    best = table.sort_values(by=["wall_seconds"], kind="stable").iloc[0]

    t1 = None if pd.isna(best["t1"]) else float(best["t1"])
    t2 = None if pd.isna(best["t2"]) else float(best["t2"])
    rho_model = LoadBalanceObservation(t1, t2).rho_model if t1 and t2 else None

    return SearchOutcome(
        beta=float(best["beta"]),
        gamma=float(best["gamma"]),
        t1=t1,
        t2=t2,
        rho_model=rho_model,
        candidates=table,
    )


def compare_engines(d: Dataset, cfg: RunConfig) -> Dict[str, Any]:
    """Hybrid against the sparse-only reference, informational only."""
    hybrid = run_hybrid(d, cfg.with_params(engine_mode=EngineMode.HYBRID))
    sparse = run_sparse_only(d, cfg.with_params(engine_mode=EngineMode.SPARSE_ONLY))

    hybrid_seconds = hybrid.diagnostics.phase_times["total"]
    sparse_seconds = sparse.diagnostics.phase_times["total"]
    comparison = {
        "hybrid_seconds": hybrid_seconds,
        "sparse_seconds": sparse_seconds,
        "speedup": sparse_seconds / hybrid_seconds if hybrid_seconds > 0 else None,
        "identical": bool(
            np.array_equal(hybrid.neighbor_ids, sparse.neighbor_ids)
            and np.array_equal(hybrid.distances, sparse.distances)
        ),
    }
    logging.info(f"engine comparison | {comparison}")
    return comparison
