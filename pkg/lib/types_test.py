import numpy as np
import pytest

from lib.errors import UsageError
from lib.types import (
    CONTIGUOUS,
    TDYNAMIC,
    TSTATIC,
    GranularityPolicy,
    KnnResult,
    Provenance,
    RunConfig,
    RunDiagnostics,
    EngineMode,
)


def test_granularity_policy_parse():
    assert GranularityPolicy.parse("tstatic:8") == GranularityPolicy(TSTATIC, 8)
    assert GranularityPolicy.parse(" TDynamic:4096 ") == GranularityPolicy(TDYNAMIC, 4096)
    assert str(GranularityPolicy.TStatic(32)) == "tstatic:32"

    for text in ["tstatic", "tstatic:x", "static:4", "tstatic:0"]:
        with pytest.raises(UsageError):
            GranularityPolicy.parse(text)


def test_granularity_policy_workers_per_point():
    assert GranularityPolicy.TStatic(8).workers_per_point(1000) == 8
    assert GranularityPolicy.TDynamic(4096).workers_per_point(1000) == 4
    assert GranularityPolicy.TDynamic(4096).workers_per_point(10000) == 1
    assert GranularityPolicy.TDynamic(4096).workers_per_point(0) == 1


def test_granularity_policy_rejects_unknown_striping():
    assert GranularityPolicy(TSTATIC, 4, CONTIGUOUS).striping == CONTIGUOUS

    with pytest.raises(UsageError):
        GranularityPolicy(TSTATIC, 4, "diagonal")


def test_run_config_validate():
    RunConfig().validate(4)

    invalid = [
        {"k": 0},
        {"beta": 1.5},
        {"gamma": -0.1},
        {"rho": 2.0},
        {"histogram_fraction": 0.0},
        {"batch_sample_fraction": 1.5},
        {"m": 5},
        {"buffer_size": 0},
        {"n_bins": 0},
        {"workers": 0},
        {"eps_override": 0.0},
        {"n_batches_override": 0},
    ]
    for changes in invalid:
        with pytest.raises(UsageError):
            RunConfig(**changes).validate(4)


def test_run_config_indexed_dims():
    assert RunConfig().indexed_dims(90) == 6
    assert RunConfig().indexed_dims(2) == 2
    assert RunConfig(m=3).indexed_dims(90) == 3


def test_knn_result_accessors():
    result = KnnResult(
        query_ids=np.array([2, 5]),
        neighbor_ids=np.array([[5, 0], [2, 1]]),
        distances=np.array([[0.5, 1.0], [0.5, 0.75]]),
        provenance=np.array([Provenance.DENSE.value, Provenance.SPARSE.value], dtype="<U24"),
        k=2,
        diagnostics=RunDiagnostics(engine_mode=EngineMode.HYBRID),
    )

    assert result.neighbors_of(5) == [(2, 0.5), (1, 0.75)]
    assert result.provenance_counts() == {
        "dense": 1,
        "sparse": 1,
        "dense_failed_then_sparse": 0,
        "oracle": 0,
    }
    assert result.to_frame()["query_id"].tolist() == [2, 2, 5, 5]

    with pytest.raises(KeyError):
        result.row_of(3)
