import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lib.core import (
    Dataset,
    euclidean_distance,
    reorder_by_variance,
    short_circuit_distance,
    short_circuit_distances,
    squared_distances,
)
from lib.errors import UsageError

finite_float = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def point_pairs(draw, max_n=12):
    n = draw(st.integers(min_value=1, max_value=max_n))
    a = draw(arrays(np.float64, n, elements=finite_float))
    b = draw(arrays(np.float64, n, elements=finite_float))
    return a, b


def test_dataset_rejects_invalid_points():
    with pytest.raises(UsageError):
        Dataset(np.array([1.0, 2.0]))

    with pytest.raises(UsageError):
        Dataset(np.array([[0.0, np.nan]]))

    with pytest.raises(UsageError):
        Dataset(np.array([[0.0, np.inf]]))

    with pytest.raises(UsageError):
        Dataset(np.zeros((0, 2)))

    with pytest.raises(UsageError):
        Dataset(np.zeros((2, 2)), dim_permutation=[0, 0])


def test_dataset_is_immutable():
    d = Dataset(np.array([[1.0, 2.0], [3.0, 4.0]]))

    with pytest.raises(ValueError):
        d.points[0, 0] = 10.0

    assert d.size == 2
    assert d.n == 2
    assert d.dim_permutation.tolist() == [0, 1]


def test_euclidean_distance():
    assert euclidean_distance([0, 0], [3, 4]) == 5.0
    assert euclidean_distance([1.5, -2.0], [1.5, -2.0]) == 0.0
    assert euclidean_distance([1, 1, 1], [2, 3, 4]) == pytest.approx(3.7416573, abs=1e-7)

    with pytest.raises(UsageError):
        euclidean_distance([0, 0], [0, 0, 0])


@given(point_pairs())
def test_euclidean_distance_is_a_metric(pair):
    a, b = pair

    assert euclidean_distance(a, b) == euclidean_distance(b, a)
    assert euclidean_distance(a, b) >= 0.0
    assert euclidean_distance(a, a) == 0.0


def test_short_circuit_distance():
    outcome = short_circuit_distance([0, 0], [3, 4], 5.0)
    assert outcome.within
    assert outcome.distance == 5.0
    assert outcome.threshold == 5.0

    outcome = short_circuit_distance([0, 0], [3, 4], 4.9)
    assert not outcome.within
    assert outcome.distance is None

    with pytest.raises(UsageError):
        short_circuit_distance([0, 0], [3, 4], 0.0)


@given(point_pairs(), st.floats(min_value=1e-3, max_value=3e3))
def test_short_circuit_distance_agrees_with_the_full_distance(pair, eps):
    a, b = pair
    distance = euclidean_distance(a, b)
    outcome = short_circuit_distance(a, b, eps)

    assert outcome.within == (distance <= eps)
    if outcome.within:
        assert outcome.distance == distance


def test_short_circuit_distances_on_random_pairs():
    rng = np.random.default_rng(0)
    points = rng.uniform(0.0, 1.0, size=(10000, 10))
    query = rng.uniform(0.0, 1.0, size=10)

    full = np.sqrt(squared_distances(points, query))
    for eps in [0.5, 0.9, 1.2]:
        for chunk in [1, 3, 8, 10]:
            rows, distances, evaluated = short_circuit_distances(points, query, eps, chunk)

            assert rows.tolist() == np.flatnonzero(full <= eps).tolist()
            assert np.array_equal(distances, full[rows])
            assert evaluated <= points.size


def test_short_circuit_distances_evaluates_fewer_dimensions_when_far():
    points = np.array([[10.0] * 16, [0.1] * 16])
    _, _, evaluated = short_circuit_distances(points, np.zeros(16), 1.0, chunk=4)

    # the far row is dropped after the first chunk
    assert evaluated == 4 + 16


def test_reorder_by_variance_follows_descending_variance():
    rng = np.random.default_rng(0)
    points = np.column_stack(
        [
            rng.uniform(0.0, 1.0, 1000),
            rng.uniform(0.0, 0.01, 1000),
            rng.uniform(0.2, 0.6, 1000),
        ]
    )
    d = Dataset(points)

    reordered = reorder_by_variance(d, 2)

    assert reordered.dim_permutation.tolist() == [0, 2, 1]
    assert np.array_equal(reordered.points[:, 1], points[:, 2])
    assert np.array_equal(reordered.original_points(), points)


def test_reorder_by_variance_breaks_ties_by_lower_dimension():
    d = Dataset(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))

    assert reorder_by_variance(d, 3).dim_permutation.tolist() == [0, 1, 2]


def test_reorder_by_variance_rejects_invalid_m():
    d = Dataset(np.zeros((3, 2)))

    with pytest.raises(UsageError):
        reorder_by_variance(d, 0)

    with pytest.raises(UsageError):
        reorder_by_variance(d, 3)


def test_reorder_by_variance_keeps_distances_and_variance_order():
    d = Dataset(np.random.default_rng(3).normal(size=(200, 5)) * [1.0, 4.0, 0.5, 2.0, 3.0])
    reordered = reorder_by_variance(d, 3)

    variances = reordered.variances()
    assert (np.diff(variances[:3]) <= 0).all()

    for i, j in [(0, 1), (5, 100), (199, 42)]:
        assert reordered.distance(i, j) == d.distance(i, j)

    inverse = reordered.points[:, reordered.inverse_permutation]
    assert np.array_equal(inverse, d.points)


@settings(deadline=None, max_examples=30)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)), elements=finite_float))
def test_metric_points_restore_the_original_order(points):
    d = Dataset(points)
    reordered = reorder_by_variance(d, d.n)

    assert np.array_equal(reordered.metric_points, d.points)
    assert math.isclose(float(reordered.variances().sum()), float(d.variances().sum()), rel_tol=1e-9, abs_tol=1e-9)
