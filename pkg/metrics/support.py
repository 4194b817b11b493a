import json
import math
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from lib.core import Dataset
from lib.types import KnnResult, RunConfig
from metrics.types import MEASUREMENTS, RawSweepResults, RunReport, SweepCellResult

KEY_COLUMNS = ["k", "beta", "gamma", "rho", "policy", "rho_source"]


def _plain(value: Any) -> Any:
    """numpy scalars and arrays to json-friendly values, NaN to None."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def build_run_report(
    result: KnnResult,
    d: Dataset,
    cfg: RunConfig,
    include_timings: bool = True,
    verification: Optional[Dict[str, Any]] = None,
) -> RunReport:
    diagnostics = result.diagnostics

    batches = diagnostics.batches
    if not include_timings:
        batches = [
            {k: v for k, v in batch.items() if not k.endswith("_seconds")} for batch in batches
        ]

    report = {
        "engine_mode": diagnostics.engine_mode.value,
        "config": cfg.describe_json(),
        "dataset": d.describe_json(),
        "k": result.k,
        "eps": diagnostics.eps,
        "epsilon_profile": None if diagnostics.profile is None else diagnostics.profile.describe_json(),
        "partition": diagnostics.partition,
        "batch_plan": diagnostics.batch_plan,
        "batches": batches,
        "failed_count": len(diagnostics.failed_ids),
        "provenance": result.provenance_counts(),
        "worker_split_sizes": diagnostics.worker_split_sizes,
        "distance_calculations": diagnostics.distance_calculations,
        "warnings": diagnostics.warnings,
    }

    if include_timings:
        report["t1"] = diagnostics.t1
        report["t2"] = diagnostics.t2
        report["rho_model"] = diagnostics.rho_model
        report["dense_busy"] = diagnostics.dense_busy
        report["sparse_busy"] = diagnostics.sparse_busy
        report["phase_times"] = diagnostics.phase_times

    if verification is not None:
        report["verification"] = verification

    return _plain(report)


def report_to_json(report: RunReport) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_run_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf8") as f:
        f.write(report_to_json(report))


def neighbors_to_tsv(result: KnnResult) -> str:
    """One `query_id<TAB>neighbor_id<TAB>distance` line per neighbor, by (query id, rank)."""
    frame = result.to_frame()
    return frame.to_csv(sep="\t", header=False, index=False, lineterminator="\n")


def write_neighbors_tsv(result: KnnResult, path: str) -> None:
    with open(path, "w", encoding="utf8", newline="") as f:
        f.write(neighbors_to_tsv(result))


def sweep_results_to_flat_table(sweep_results: RawSweepResults) -> pd.DataFrame:
    all_rows = []

    for key, cell_result in sweep_results.items():
        flat_row = dict(zip(KEY_COLUMNS, key))
        flat_row.update(cell_result.describe_json())
        all_rows.append(flat_row)

    return pd.DataFrame(all_rows, columns=KEY_COLUMNS + MEASUREMENTS)


def flat_table_to_sweep_results(flat_table: pd.DataFrame) -> RawSweepResults:
    sweep_results = {}

    for _, row in flat_table.iterrows():
        key = (
            int(row["k"]),
            float(row["beta"]),
            float(row["gamma"]),
            float(row["rho"]),
            str(row["policy"]),
            str(row["rho_source"]),
        )

        measurements = {}
        for name in MEASUREMENTS:
            value = row.get(name)
            measurements[name] = None if pd.isna(value) else _plain(value)

        sweep_results[key] = SweepCellResult(measurements)

    return sweep_results
