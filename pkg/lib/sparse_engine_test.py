import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lib.core import Dataset, reorder_by_variance
from lib.dense_engine import brute_force_knn
from lib.errors import UsageError
from lib.helper import random_dataset
from lib.sparse_engine import build_kdtree, knn_query, run_sparse_knn


def test_build_kdtree_invariants():
    d = random_dataset(1000, 4, seed=1)
    t = build_kdtree(d, bucket_capacity=16)

    assert sorted(t.order.tolist()) == list(range(1000))
    assert t.depth() < 20

    points = d.metric_points
    for node in range(t.n_nodes):
        if t.is_leaf(node):
            ids = t.order[t.start[node] : t.end[node]]
            assert 0 < len(ids) <= 16
            assert (points[ids] >= t.lo[node]).all()
            assert (points[ids] <= t.hi[node]).all()
            continue

        dim = t.split_dim[node]
        left, right = t.left[node], t.right[node]
        assert t.hi[left, dim] <= t.split_value[node]
        assert t.lo[right, dim] > t.split_value[node]


def test_build_kdtree_keeps_identical_points_in_one_leaf():
    d = Dataset(np.ones((50, 3)))
    t = build_kdtree(d, bucket_capacity=4)

    assert t.n_nodes == 1
    assert t.leaves() == [0]


def test_build_kdtree_rejects_an_empty_bucket():
    with pytest.raises(UsageError):
        build_kdtree(random_dataset(10, 2), bucket_capacity=0)


def test_knn_query_on_a_line():
    d = Dataset(np.array([[0.0], [1.0], [-1.0], [2.0], [5.0]]))
    t = build_kdtree(d, bucket_capacity=1)

    ids, distances = knn_query(t, 0, 3)

    assert ids.tolist() == [1, 2, 3]
    assert distances.tolist() == [1.0, 1.0, 2.0]


def test_knn_query_clamps_k_and_rejects_zero():
    d = Dataset(np.array([[0.0, 0.0], [1.0, 1.0]]))
    t = build_kdtree(d)

    ids, _ = knn_query(t, 0, 5)
    assert ids.tolist() == [1]

    with pytest.raises(UsageError):
        knn_query(t, 0, 0)


@pytest.mark.parametrize("bucket_capacity", [1, 4, 16])
def test_knn_query_matches_the_oracle_with_ties(bucket_capacity):
    d = reorder_by_variance(random_dataset(600, 3, seed=2, decimals=1), 2)
    t = build_kdtree(d, bucket_capacity)
    _, expected_ids, expected_distances = brute_force_knn(d, 7)

    for q in range(d.size):
        ids, distances = knn_query(t, q, 7)
        assert ids.tolist() == expected_ids[q].tolist()
        assert np.array_equal(distances, expected_distances[q])


@settings(deadline=None, max_examples=30)
@given(
    st.integers(min_value=2, max_value=80),
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=10),
    st.integers(min_value=0, max_value=10**6),
)
def test_prop_knn_query_matches_the_oracle(size, n, k, seed):
    d = random_dataset(size, n, seed=seed, decimals=1)
    t = build_kdtree(d, bucket_capacity=1 + seed % 8)
    _, expected_ids, expected_distances = brute_force_knn(d, k)

    for q in range(size):
        ids, distances = knn_query(t, q, k)
        assert ids.tolist() == expected_ids[q].tolist()
        assert np.array_equal(distances, expected_distances[q])


def test_run_sparse_knn_splits_round_robin():
    d = random_dataset(1000, 3, seed=3)
    queries = np.arange(0, 1000, 3)

    outcome = run_sparse_knn(d, queries, 5, workers=16)

    assert outcome.query_ids.tolist() == queries.tolist()
    assert len(outcome.worker_split_sizes) == 16
    assert sum(outcome.worker_split_sizes) == len(queries)
    assert max(outcome.worker_split_sizes) - min(outcome.worker_split_sizes) <= 1
    assert outcome.t1 is not None

    _, expected_ids, expected_distances = brute_force_knn(d, 5, queries)
    assert np.array_equal(outcome.neighbor_ids, expected_ids)
    assert np.array_equal(outcome.distances, expected_distances)


def test_run_sparse_knn_does_not_depend_on_workers_or_index_sharing():
    d = random_dataset(400, 2, seed=4, decimals=2)

    reference = run_sparse_knn(d, np.arange(400), 4, workers=1)
    for workers, duplicate_index in [(3, False), (8, True)]:
        outcome = run_sparse_knn(d, np.arange(400), 4, workers=workers, duplicate_index=duplicate_index)

        assert np.array_equal(outcome.neighbor_ids, reference.neighbor_ids)
        assert np.array_equal(outcome.distances, reference.distances)


def test_run_sparse_knn_without_queries():
    outcome = run_sparse_knn(random_dataset(20, 2), np.empty(0, dtype=np.int64), 3, workers=4)

    assert outcome.neighbor_ids.shape == (0, 3)
    assert outcome.t1 is None
    assert outcome.worker_split_sizes == [0, 0, 0, 0]


def test_run_sparse_knn_rejects_no_workers():
    with pytest.raises(UsageError):
        run_sparse_knn(random_dataset(20, 2), np.arange(20), 3, workers=0)
