import math

import numpy as np
import pytest
from scipy.special import gamma as gamma_function

from lib.core import Dataset
from lib.errors import UsageError
from lib.grid_index import build_index
from lib.helper import random_dataset
from lib.partitioner import (
    LoadBalanceObservation,
    compute_n_min,
    compute_n_thresh,
    compute_rho_model,
    n_min_from_volumes,
    split_work,
)
from lib.utils import ceil_fraction
from metrics.datasets import generate_synthetic


def test_compute_n_min_spot_values():
    assert compute_n_min(1, 2) == pytest.approx(4 / math.pi, rel=1e-12)
    assert compute_n_min(5, 2) == pytest.approx(20 / math.pi, rel=1e-12)
    assert compute_n_min(10, 3) == pytest.approx(19.0986, abs=1e-4)
    assert compute_n_min(1, 1) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("k", [1, 5, 10, 50])
def test_compute_n_min_matches_the_volume_ratio(k):
    for m in range(1, 13):
        expected = k * 2.0**m * gamma_function(m / 2 + 1) / math.pi ** (m / 2)

        assert compute_n_min(k, m) == pytest.approx(expected, rel=1e-10)
        assert n_min_from_volumes(k, m, 0.37) == pytest.approx(expected, rel=1e-10)


def test_compute_n_min_grows_with_m():
    values = [compute_n_min(5, m) for m in range(1, 13)]

    assert (np.diff(values) > 0).all()


def test_compute_n_thresh():
    n_min = compute_n_min(5, 2)

    assert compute_n_thresh(n_min, 0.0) == n_min
    assert compute_n_thresh(n_min, 1.0) == pytest.approx(10 * n_min)
    assert compute_n_thresh(n_min, 0.5) == pytest.approx(5.5 * n_min)

    with pytest.raises(UsageError):
        compute_n_thresh(n_min, 1.5)


@pytest.mark.parametrize(
    "t1, t2, expected",
    [
        (2.948e-5, 5.474e-5, 0.650),
        (1.160e-5, 1.188e-5, 0.506),
        (2.610e-3, 4.624e-4, 0.151),
        (2.126e-4, 1.487e-4, 0.412),
    ],
)
def test_compute_rho_model(t1, t2, expected):
    assert compute_rho_model(t1, t2) == pytest.approx(expected, abs=1e-3)
    assert LoadBalanceObservation(t1, t2).rho_model == compute_rho_model(t1, t2)


def test_compute_rho_model_rejects_missing_times():
    with pytest.raises(UsageError):
        compute_rho_model(0.0, 1e-5)


def test_modeled_imbalance_vanishes_at_rho_model():
    observation = LoadBalanceObservation(2.0, 6.0)
    rho = observation.rho_model
    total = 1000

    q_cpu = rho * total
    assert observation.modeled_imbalance(q_cpu, total - q_cpu) == pytest.approx(0.0)


def test_split_work_by_cell_population():
    # a tight clump of 30 points and 5 isolated ones
    rng = np.random.default_rng(0)
    clump = rng.uniform(0.0, 0.01, size=(30, 2))
    isolated = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]])
    d = Dataset(np.vstack([clump, isolated]))
    g = build_index(d, 2, 0.05)

    partition = split_work(g, 5, 0.0, 0.0, 0.0)

    assert partition.q_gpu.tolist() == list(range(30))
    assert partition.q_cpu.tolist() == list(range(30, 35))
    assert partition.n_min == pytest.approx(20 / math.pi)
    assert partition.population_of(0) == 30
    assert partition.population_of(34) == 1
    assert partition.size == 35


def test_split_work_with_gamma_one_on_sparse_data():
    d = generate_synthetic("uniform", 2000, 2, seed=1)
    g = build_index(d, 2, 0.01)

    partition = split_work(g, 5, 0.0, 1.0, 0.0)

    assert partition.n_thresh == pytest.approx(10 * compute_n_min(5, 2))
    assert len(partition.q_gpu) == 0
    assert len(partition.q_cpu) == 2000


def test_split_work_is_monotone_in_gamma():
    d = generate_synthetic("mixture", 3000, 2, seed=2)
    g = build_index(d, 2, 0.02)

    sizes = [len(split_work(g, 5, 0.0, gamma, 0.0).q_gpu) for gamma in np.linspace(0.0, 1.0, 11)]

    assert (np.diff(sizes) <= 0).all()


@pytest.mark.parametrize("rho", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_split_work_honors_the_rho_floor(rho):
    d = generate_synthetic("mixture", 2000, 2, seed=3)
    g = build_index(d, 2, 0.05)

    partition = split_work(g, 5, 0.0, 0.0, rho)

    assert len(partition.q_cpu) >= ceil_fraction(rho, 2000)
    assert len(partition.q_cpu) + len(partition.q_gpu) == 2000
    assert not set(partition.q_cpu.tolist()) & set(partition.q_gpu.tolist())


def test_split_work_demotes_the_least_populated_cells_first():
    d = generate_synthetic("mixture", 2000, 2, seed=4)
    g = build_index(d, 2, 0.05)

    baseline = split_work(g, 5, 0.0, 0.0, 0.0)
    partition = split_work(g, 5, 0.0, 0.0, 0.9)

    assert len(partition.demoted) == ceil_fraction(0.9, 2000) - len(baseline.q_cpu)
    assert len(partition.demoted) > 0
    assert set(partition.demoted.tolist()) <= set(baseline.q_gpu.tolist())

    populations = partition.cell_population
    assert populations[partition.demoted].max() <= populations[partition.q_gpu].min()


def test_split_work_with_rho_one_sends_everything_to_the_sparse_engine():
    g = build_index(random_dataset(500, 2, seed=5), 2, 0.2)

    partition = split_work(g, 5, 0.0, 0.0, 1.0)

    assert len(partition.q_gpu) == 0
    assert partition.q_cpu.tolist() == list(range(500))


def test_split_work_on_a_query_subset():
    g = build_index(random_dataset(500, 2, seed=6), 2, 0.2)
    queries = np.array([400, 3, 77, 3])

    partition = split_work(g, 5, 0.0, 0.0, 0.0, queries)

    assert sorted(partition.q_gpu.tolist() + partition.q_cpu.tolist()) == [3, 77, 400]


def test_split_work_rejects_invalid_parameters():
    g = build_index(random_dataset(50, 2), 2, 0.2)

    for beta, gamma, rho in [(-0.1, 0.0, 0.0), (0.0, 1.1, 0.0), (0.0, 0.0, 2.0)]:
        with pytest.raises(UsageError):
            split_work(g, 5, beta, gamma, rho)
