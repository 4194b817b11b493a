import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from lib.core import Dataset, squared_distances
from lib.errors import DegenerateProfileError, TargetUnreachableError, UsageError
from lib.utils import ceil_fraction

DEFAULT_N_BINS = 100
DEFAULT_QUERY_FRACTION = 0.01
DEFAULT_QUERY_FLOOR = 100
EPS_MEAN_PAIRS_PER_POINT = 10
EPS_MEAN_MAX_PAIRS = 10**6
PAIR_BLOCK = 65536


@dataclass(frozen=True)
class EpsilonProfile:
    """
    Histogram of sampled distances below `eps_mean`. Bin d (1-based) covers
    [(d - 1) * bin_width, d * bin_width). `counts` and `cumulative` are
    averages per sampled query, so they compare directly against K.
    """

    eps_mean: float
    n_bins: int
    bin_width: float
    raw_counts: np.ndarray
    n_queries: int
    counts: np.ndarray
    cumulative: np.ndarray
    sample_fraction: float
    seed: int
    k: Optional[int] = None
    eps_default: Optional[float] = None
    beta: Optional[float] = None
    eps_beta: Optional[float] = None
    eps_final: Optional[float] = None

    def bin_starts(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width

    def bin_ends(self) -> np.ndarray:
        return np.arange(1, self.n_bins + 1) * self.bin_width

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "bin": np.arange(1, self.n_bins + 1),
                "start": self.bin_starts(),
                "end": self.bin_ends(),
                "count": self.counts,
                "cumulative": self.cumulative,
            }
        )

    def describe_json(self) -> Dict[str, Any]:
        return {
            "eps_mean": self.eps_mean,
            "n_bins": self.n_bins,
            "bin_width": self.bin_width,
            "n_queries": self.n_queries,
            "sample_fraction": self.sample_fraction,
            "seed": self.seed,
            "k": self.k,
            "eps_default": self.eps_default,
            "beta": self.beta,
            "eps_beta": self.eps_beta,
            "eps_final": self.eps_final,
            "max_cumulative": float(self.cumulative[-1]),
        }


def _pair_distances(points: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    diff = points[i] - points[j]
    return np.sqrt(np.cumsum(diff * diff, axis=1)[:, -1])


def estimate_eps_mean(d: Dataset, sample_pairs: Optional[int] = None, seed: int = 0) -> float:
    """
    Mean distance over uniformly drawn ordered pairs (i != j). When the
    requested sample covers every ordered pair, all pairs are enumerated.
    """
    if d.size < 2:
        raise UsageError("estimating eps_mean needs at least two points")

    total_pairs = d.size * (d.size - 1)
    if sample_pairs is None:
        sample_pairs = min(EPS_MEAN_PAIRS_PER_POINT * d.size, EPS_MEAN_MAX_PAIRS)
    if sample_pairs < 1:
        raise UsageError("sample_pairs must be >= 1")

    points = d.metric_points

    if sample_pairs >= total_pairs:
        i, j = np.triu_indices(d.size, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, d.size, size=sample_pairs)
        j = rng.integers(0, d.size - 1, size=sample_pairs)
        j = j + (j >= i)

    total = 0.0
    for start in range(0, len(i), PAIR_BLOCK):
        stop = start + PAIR_BLOCK
        total += float(_pair_distances(points, i[start:stop], j[start:stop]).sum())

    return total / len(i)


def build_distance_histogram(
    d: Dataset,
    eps_mean: float,
    n_bins: int = DEFAULT_N_BINS,
    query_fraction: float = DEFAULT_QUERY_FRACTION,
    seed: int = 0,
    query_floor: int = DEFAULT_QUERY_FLOOR,
) -> EpsilonProfile:
    if eps_mean <= 0:
        raise DegenerateProfileError(
            f"eps_mean is {eps_mean}, every sampled pair is at distance zero"
        )
    if n_bins < 1:
        raise UsageError("n_bins must be >= 1")
    if query_fraction <= 0 or query_fraction > 1:
        raise UsageError("query_fraction must be > 0.0 and <= 1.0")

    n_queries = min(d.size, max(ceil_fraction(query_fraction, d.size), min(query_floor, d.size)))
    rng = np.random.default_rng(seed)
    queries = np.sort(rng.choice(d.size, size=n_queries, replace=False))

    points = d.metric_points
    bin_width = eps_mean / n_bins
    raw_counts = np.zeros(n_bins, dtype=np.int64)

    for q in queries.tolist():
        distances = np.sqrt(squared_distances(points, points[q]))
        distances = np.delete(distances, q)
        distances = distances[distances < eps_mean]

        bins = np.minimum((distances / bin_width).astype(np.int64), n_bins - 1)
        raw_counts += np.bincount(bins, minlength=n_bins)

    counts = raw_counts / n_queries
    cumulative = np.cumsum(raw_counts) / n_queries

    log_fields = {
        "eps_mean": eps_mean,
        "n_bins": n_bins,
        "n_queries": n_queries,
        "max_cumulative": float(cumulative[-1]),
    }
    logging.info(f"distance histogram built | {log_fields}")

    return EpsilonProfile(
        eps_mean=float(eps_mean),
        n_bins=n_bins,
        bin_width=float(bin_width),
        raw_counts=raw_counts,
        n_queries=n_queries,
        counts=counts,
        cumulative=cumulative,
        sample_fraction=query_fraction,
        seed=seed,
    )


def neighbor_target(k: int, beta: float) -> float:
    return k + (100 * k - k) * beta


def select_eps_beta(profile: EpsilonProfile, k: int, beta: float) -> Tuple[float, float]:
    if k < 1:
        raise UsageError("k must be >= 1")
    if beta < 0.0 or beta > 1.0:
        raise UsageError("beta must be >= 0.0 and <= 1.0")
    if len(profile.cumulative) == 0:
        raise DegenerateProfileError("the profile has no bins")

    target = neighbor_target(k, beta)
    reached = np.flatnonzero(profile.cumulative >= target)
    if len(reached) == 0:
        raise TargetUnreachableError(target, float(profile.cumulative[-1]))

    d = int(reached[0])
    start = d * profile.bin_width
    end = (d + 1) * profile.bin_width
    eps_beta = (start + end) / 2

    return eps_beta, 2 * eps_beta


def with_selection(profile: EpsilonProfile, k: int, beta: float) -> EpsilonProfile:
    eps_default, _ = select_eps_beta(profile, k, 0.0)
    eps_beta, eps_final = select_eps_beta(profile, k, beta)

    return replace(
        profile,
        k=k,
        eps_default=eps_default,
        beta=beta,
        eps_beta=eps_beta,
        eps_final=eps_final,
    )


def select_epsilon(
    d: Dataset,
    k: int,
    beta: float,
    n_bins: int = DEFAULT_N_BINS,
    query_fraction: float = DEFAULT_QUERY_FRACTION,
    query_floor: int = DEFAULT_QUERY_FLOOR,
    eps_mean_pairs: Optional[int] = None,
    eps_mean_seed: int = 0,
    histogram_seed: int = 0,
) -> EpsilonProfile:
    """Both selection passes: eps_mean first, then the histogram."""
    eps_mean = estimate_eps_mean(d, eps_mean_pairs, eps_mean_seed)
    profile = build_distance_histogram(
        d, eps_mean, n_bins, query_fraction, histogram_seed, query_floor
    )
    profile = with_selection(profile, k, beta)

    log_fields = {
        "k": k,
        "beta": beta,
        "eps_default": profile.eps_default,
        "eps_beta": profile.eps_beta,
        "eps": profile.eps_final,
    }
    logging.info(f"epsilon selected | {log_fields}")

    return profile


def expected_satisfied_fraction(dataset_size: int, k: int, extra_per_success: int) -> float:
    """
    Fraction of the dataset that can find K neighbors when the result budget
    is |D| * (K + 1): failed points return only themselves, successful ones
    return K + 1 + extra results.
    """
    if dataset_size < 1 or k < 1 or extra_per_success < 0:
        raise UsageError("dataset_size and k must be >= 1, extra_per_success >= 0")

    budget = dataset_size * (k + 1)
    # s * (K + 1 + extra) + (|D| - s) = budget
    satisfied = (budget - dataset_size) / (k + extra_per_success)
    return satisfied / dataset_size
