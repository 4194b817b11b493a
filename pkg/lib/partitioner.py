import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy.special import gamma as gamma_function

from lib.errors import UsageError
from lib.grid_index import GridIndex
from lib.utils import ceil_fraction


def compute_n_min(k: int, m_eff: int) -> float:
    """
    Minimum cell population for K expected neighbors: K times the ratio
    between the m-cube of edge 2r and its inscribed m-ball of radius r.
    """
    if k < 1 or m_eff < 1:
        raise UsageError("k and m_eff must be >= 1")

    return k * 2.0**m_eff * float(gamma_function(m_eff / 2 + 1)) / math.pi ** (m_eff / 2)


def n_min_from_volumes(k: int, m_eff: int, eps_beta: float) -> float:
    cube = (2 * eps_beta) ** m_eff
    ball = math.pi ** (m_eff / 2) * eps_beta**m_eff / float(gamma_function(m_eff / 2 + 1))
    return cube * k / ball


def compute_n_thresh(n_min: float, gamma: float) -> float:
    if gamma < 0.0 or gamma > 1.0:
        raise UsageError("gamma must be >= 0.0 and <= 1.0")

    return n_min + (10 * n_min - n_min) * gamma


def compute_rho_model(t1: float, t2: float) -> float:
    if t1 <= 0 or t2 <= 0:
        raise UsageError("per-query times must be > 0")

    return t2 / (t1 + t2)


@dataclass(frozen=True)
class LoadBalanceObservation:
    t1: float
    t2: float

    @property
    def rho_model(self) -> float:
        return compute_rho_model(self.t1, self.t2)

    def modeled_imbalance(self, q_cpu: int, q_gpu: int) -> float:
        return abs(self.t1 * q_cpu - self.t2 * q_gpu)


@dataclass(frozen=True)
class WorkPartition:
    q_gpu: np.ndarray
    q_cpu: np.ndarray
    cell_population: np.ndarray
    beta: float
    gamma: float
    rho: float
    n_min: float
    n_thresh: float
    demoted: np.ndarray

    @property
    def size(self) -> int:
        return len(self.q_gpu) + len(self.q_cpu)

    def population_of(self, point_id: int) -> int:
        return int(self.cell_population[point_id])

    def describe_json(self) -> Dict[str, Any]:
        return {
            "q_cpu": len(self.q_cpu),
            "q_gpu": len(self.q_gpu),
            "n_min": self.n_min,
            "n_thresh": self.n_thresh,
            "demoted": len(self.demoted),
            "beta": self.beta,
            "gamma": self.gamma,
            "rho": self.rho,
        }


def split_work(
    g: GridIndex,
    k: int,
    beta: float,
    gamma: float,
    rho: float,
    query_ids: Optional[np.ndarray] = None,
) -> WorkPartition:
    for name, value in [("beta", beta), ("gamma", gamma), ("rho", rho)]:
        if value < 0.0 or value > 1.0:
            raise UsageError(f"{name} must be >= 0.0 and <= 1.0")

    if query_ids is None:
        query_ids = np.arange(g.dataset.size, dtype=np.int64)
    query_ids = np.unique(np.asarray(query_ids, dtype=np.int64))

    n_min = compute_n_min(k, g.m)
    n_thresh = compute_n_thresh(n_min, gamma)

    cell_population = g.point_populations()
    dense = cell_population[query_ids] >= n_thresh
    q_gpu = query_ids[dense]
    q_cpu = query_ids[~dense]

    cpu_floor = ceil_fraction(rho, len(query_ids))
    missing = max(0, cpu_floor - len(q_cpu))
    demoted = np.empty(0, dtype=np.int64)

    if missing > 0:
        # least populated cells first, then cell id, then point id
        order = np.lexsort((q_gpu, g.point_cells[q_gpu], cell_population[q_gpu]))
        demoted = np.sort(q_gpu[order[:missing]])
        q_gpu = np.sort(q_gpu[order[missing:]])
        q_cpu = np.sort(np.concatenate([q_cpu, demoted]))

    partition = WorkPartition(
        q_gpu=q_gpu,
        q_cpu=q_cpu,
        cell_population=cell_population,
        beta=beta,
        gamma=gamma,
        rho=rho,
        n_min=n_min,
        n_thresh=n_thresh,
        demoted=demoted,
    )

    logging.info(f"work split | {partition.describe_json()}")
    return partition
