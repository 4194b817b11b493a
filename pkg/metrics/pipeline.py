import itertools
import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import pandas as pd

from lib.core import Dataset
from lib.errors import RunError, UsageError
from lib.orchestrator import run_knn
from lib.partitioner import compute_rho_model
from lib.types import GranularityPolicy, RunConfig
from metrics.support import flat_table_to_sweep_results, sweep_results_to_flat_table
from metrics.types import (
    RHO_GRID,
    RHO_MODEL,
    STATUS_FAILED,
    STATUS_OK,
    RawSweepResults,
    SweepCellResult,
    SweepKey,
)

REFINEMENT_BASE_RHO = 0.5


@dataclass(frozen=True)
class SweepGrid:
    ks: List[int] = field(default_factory=lambda: [5])
    betas: List[float] = field(default_factory=lambda: [0.0])
    gammas: List[float] = field(default_factory=lambda: [0.0])
    rhos: List[float] = field(default_factory=lambda: [REFINEMENT_BASE_RHO])
    policies: List[str] = field(default_factory=lambda: ["tstatic:8"])

    def cells(self) -> List[SweepKey]:
        return [
            (k, float(beta), float(gamma), float(rho), policy, RHO_GRID)
            for k, beta, gamma, rho, policy in itertools.product(
                self.ks, self.betas, self.gammas, self.rhos, self.policies
            )
        ]


class SweepRepository:
    """
    Wrapper for `RawSweepResults` persisted as a flat CSV table, so an
    interrupted sweep resumes where it stopped.
    """

    raw_sweep_results: RawSweepResults

    def __init__(self, csv_file_path: str) -> None:
        if not csv_file_path.endswith(".csv"):
            raise UsageError("only CSV files are supported")

        self.csv_file_path = csv_file_path
        self.raw_sweep_results = {}

    def load_from_file(self) -> None:
        if not os.path.exists(self.csv_file_path):
            logging.warning(f"file does not exist, creating new one: {self.csv_file_path}")
            return

        df = pd.read_csv(self.csv_file_path)
        self.raw_sweep_results = flat_table_to_sweep_results(df)

    def save_to_file(self) -> None:
        df = sweep_results_to_flat_table(self.raw_sweep_results)
        df.to_csv(self.csv_file_path, index=False)

    def add_result(self, key: SweepKey, result: SweepCellResult) -> None:
        self.raw_sweep_results[key] = result

    def result_already_exists(self, key: SweepKey) -> bool:
        return key in self.raw_sweep_results

    def to_frame(self) -> pd.DataFrame:
        return sweep_results_to_flat_table(self.raw_sweep_results)

    def describe_log(self) -> None:
        for result in self.describe_dict():
            logging.info(f"information for sweep cell: {result}")

    def describe_dict(self) -> List[Dict[str, Any]]:
        return self.to_frame().to_dict(orient="records")


class SweepPipeline:
    def __init__(
        self,
        repository: SweepRepository,
        dataset: Dataset,
        grid: SweepGrid,
        base_cfg: Optional[RunConfig] = None,
    ) -> None:
        self.repository = repository
        self.dataset = dataset
        self.grid = grid
        self.base_cfg = base_cfg if base_cfg is not None else RunConfig()

    def _config_for(self, key: SweepKey) -> RunConfig:
        k, beta, gamma, rho, policy, _ = key
        # the sweep key names mode and value only, striping comes from the base config
        parsed = GranularityPolicy.parse(policy)
        return self.base_cfg.with_params(
            k=k,
            beta=beta,
            gamma=gamma,
            rho=rho,
            policy=replace(parsed, striping=self.base_cfg.policy.striping),
        )

    def run_cell(self, key: SweepKey) -> SweepCellResult:
        """Runs one cell; failures are recorded instead of raised."""
        started = time.perf_counter()
        try:
            result = run_knn(self.dataset, self._config_for(key))
        except (RunError, UsageError) as e:
            cause = e.__cause__ if e.__cause__ is not None else e
            logging.warning(f"sweep cell failed: {cause} | {dict(zip(['k', 'beta', 'gamma', 'rho'], key))}")
            return SweepCellResult(
                {
                    "status": STATUS_FAILED,
                    "wall_seconds": time.perf_counter() - started,
                    "error": f"{type(cause).__name__}: {cause}",
                }
            )

        diagnostics = result.diagnostics
        return SweepCellResult(
            {
                "status": STATUS_OK,
                "wall_seconds": diagnostics.phase_times["total"],
                "eps": diagnostics.eps,
                "t1": diagnostics.t1,
                "t2": diagnostics.t2,
                "rho_model": diagnostics.rho_model,
                "failed": len(diagnostics.failed_ids),
                "q_gpu": diagnostics.partition.get("q_gpu"),
                "q_cpu": diagnostics.partition.get("q_cpu"),
                "imbalance": diagnostics.realized_imbalance(),
                "error": None,
            }
        )

    def _run_keys(self, keys: List[SweepKey]) -> None:
        total_cells = len(keys)

        for cell_index, key in enumerate(keys, start=1):
            log_fields = {
                "k": key[0],
                "beta": key[1],
                "gamma": key[2],
                "rho": key[3],
                "policy": key[4],
                "rho_source": key[5],
                "cell_index": cell_index,
                "total_cells": total_cells,
            }
            logging.info(f"running sweep cell | {log_fields}")

            if self.repository.result_already_exists(key):
                logging.info(f"sweep cell already measured, skipping | {log_fields}")
                continue

            self.repository.add_result(key, self.run_cell(key))
            self.repository.save_to_file()

            logging.info(f"sweep cell finished | {log_fields}")

    def run(self) -> None:
        logging.info("pipeline: running every sweep cell")

        self.repository.load_from_file()
        self._run_keys(self.grid.cells())

        logging.info("pipeline: finished running the sweep")

    def refinement_keys(self) -> List[SweepKey]:
        """
        One rerun per measured rho = 0.5 cell, with rho replaced by the
        rho^Model derived from that cell's t1 and t2.
        """
        keys = []
        for key, result in self.repository.raw_sweep_results.items():
            k, beta, gamma, rho, policy, source = key
            if source != RHO_GRID or rho != REFINEMENT_BASE_RHO or not result.ok:
                continue

            t1, t2 = result.raw().get("t1"), result.raw().get("t2")
            if t1 is None or t2 is None or t1 <= 0 or t2 <= 0:
                logging.warning(f"no rho_model for cell, t1 or t2 missing | {dict(zip(['k', 'beta', 'gamma'], key))}")
                continue

            rho_model = round(compute_rho_model(t1, t2), 6)
            keys.append((k, beta, gamma, rho_model, policy, RHO_MODEL))

        return keys

    def run_rho_refinement(self) -> None:
        logging.info("pipeline: rerunning the rho = 0.5 cells with rho_model")

        self.repository.load_from_file()
        self._run_keys(self.refinement_keys())

        logging.info("pipeline: finished the rho_model refinement")
