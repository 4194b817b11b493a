from typing import Optional

import numpy as np

from lib.core import Dataset
from lib.dense_engine import brute_force_knn
from lib.types import KnnResult


def random_dataset(size: int, n: int, seed: int = 0, decimals: Optional[int] = None) -> Dataset:
    """
    Uniform points in the unit cube. Rounding to a few decimals produces
    duplicate coordinates and tied distances.
    """
    points = np.random.default_rng(seed).uniform(0.0, 1.0, size=(size, n))
    if decimals is not None:
        points = np.round(points, decimals)
    return Dataset(points)


def expect_result_to_match_oracle(result: KnnResult, d: Dataset, k: int):
    """
    Asserts that every neighbor list equals the brute-force one bit for bit,
    printing the first differing rows otherwise.
    """
    query_ids, neighbor_ids, distances = brute_force_knn(d, k, result.query_ids)

    msg = f"expected queries: {query_ids[:10]}, got queries: {result.query_ids[:10]}"
    assert np.array_equal(query_ids, result.query_ids), msg

    msg = f"expected k: {neighbor_ids.shape[1]}, got k: {result.k}"
    assert result.neighbor_ids.shape == neighbor_ids.shape, msg

    same = (result.neighbor_ids == neighbor_ids).all(axis=1)
    same &= (result.distances == distances).all(axis=1)
    rows = np.flatnonzero(~same)[:5]

    msg = "expected neighbor lists to match the oracle, but they didn't:\n"
    for row in rows.tolist():
        msg += (
            f"\nquery {query_ids[row]} ({result.provenance[row]})"
            f"\n  got:      {list(zip(result.neighbor_ids[row], result.distances[row]))}"
            f"\n  expected: {list(zip(neighbor_ids[row], distances[row]))}"
        )
    assert len(rows) == 0, msg
