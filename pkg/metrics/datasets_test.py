import numpy as np
import pytest

from lib.core import Dataset
from lib.errors import IngestionError, UsageError
from metrics.datasets import (
    BINARY,
    TSV,
    DatasetsLoader,
    export_binary,
    export_text,
    generate_synthetic,
    infer_format,
    ingest_dataset,
)


def write(tmp_path, name: str, content: str) -> str:
    path = tmp_path / name
    path.write_text(content)
    return str(path)


def test_infer_format():
    assert infer_format("points.csv") == "csv"
    assert infer_format("points.TSV") == "tsv"
    assert infer_format("points.bin") == BINARY
    assert infer_format("points.f64") == BINARY

    with pytest.raises(UsageError):
        infer_format("points.parquet")


def test_ingest_csv(tmp_path):
    d = ingest_dataset(write(tmp_path, "points.csv", "0,0\n3,4\n"))

    assert d.size == 2
    assert d.n == 2
    assert d.points.tolist() == [[0.0, 0.0], [3.0, 4.0]]


def test_ingest_tsv_skips_blank_lines(tmp_path):
    d = ingest_dataset(write(tmp_path, "points.tsv", "1.5\t-2\n\n 3e-1\t4\n"))

    assert d.points.tolist() == [[1.5, -2.0], [0.3, 4.0]]


def test_ingest_reports_non_numeric_fields(tmp_path):
    with pytest.raises(IngestionError) as e:
        ingest_dataset(write(tmp_path, "points.csv", "0,0\nabc,1\n"))

    assert e.value.row == 2
    assert e.value.column == 1
    assert "abc" in str(e.value)


def test_ingest_reports_ragged_rows(tmp_path):
    with pytest.raises(IngestionError) as e:
        ingest_dataset(write(tmp_path, "points.csv", "0,0\n1,1\n2\n"))

    assert e.value.row == 3


def test_ingest_reports_non_finite_values(tmp_path):
    with pytest.raises(IngestionError) as e:
        ingest_dataset(write(tmp_path, "points.csv", "0,0\n1,nan\n"))

    assert (e.value.row, e.value.column) == (2, 2)


@pytest.mark.parametrize(
    "content, row, column",
    [
        ("0,0\n\n1,abc\n", 3, 2),
        ("0,0\n\n\n1,2\n3,4,5\n", 5, None),
        ("0,0\n  \n1\n", 3, 2),
        ("0,0\n\n1,,\n", 3, None),
        ("\n0,0\n\n1,inf\n", 4, 2),
    ],
)
def test_ingest_locates_errors_by_line_after_blank_lines(tmp_path, content, row, column):
    with pytest.raises(IngestionError) as e:
        ingest_dataset(write(tmp_path, "points.csv", content))

    assert e.value.row == row
    if column is not None:
        assert e.value.column == column
    assert f"row {row}" in str(e.value)


def test_ingest_csv_keeps_full_precision(tmp_path):
    d = ingest_dataset(write(tmp_path, "points.csv", "0.1,0.30000000000000004\n1e-300,-2.5\n"))

    assert d.points.tolist() == [[0.1, 0.30000000000000004], [1e-300, -2.5]]


def test_ingest_reports_empty_and_missing_files(tmp_path):
    with pytest.raises(IngestionError):
        ingest_dataset(write(tmp_path, "points.csv", "\n\n"))

    with pytest.raises(IngestionError):
        ingest_dataset(str(tmp_path / "missing.csv"))

    with pytest.raises(UsageError):
        ingest_dataset(write(tmp_path, "points.txt", "0,0\n"), format="json")


def test_binary_round_trip(tmp_path):
    d = generate_synthetic("gaussian-clusters", 200, 5, seed=1)
    path = str(tmp_path / "points.bin")

    export_binary(d, path)
    loaded = ingest_dataset(path)

    assert loaded == d


def test_text_round_trip(tmp_path):
    d = generate_synthetic("uniform", 50, 3, seed=2)
    path = str(tmp_path / "points.tsv")

    export_text(d, path, TSV)

    assert ingest_dataset(path) == d


def test_binary_length_mismatch(tmp_path):
    path = tmp_path / "points.bin"
    header = np.array([3, 2], dtype="<u8").tobytes()
    path.write_bytes(header + np.zeros(5, dtype="<f8").tobytes())

    with pytest.raises(IngestionError):
        ingest_dataset(str(path))

    path.write_bytes(header[:8])
    with pytest.raises(IngestionError):
        ingest_dataset(str(path))


@pytest.mark.parametrize("kind", ["uniform", "gaussian-clusters", "mixture"])
def test_generate_synthetic_is_seeded(kind):
    first = generate_synthetic(kind, 500, 3, seed=7)
    second = generate_synthetic(kind, 500, 3, seed=7)
    other = generate_synthetic(kind, 500, 3, seed=8)

    assert first == second
    assert first != other
    assert first.size == 500
    assert first.n == 3


def test_generate_synthetic_mixture_has_dense_clusters():
    d = generate_synthetic("mixture", 1000, 2, seed=3, clusters=1)

    center = np.median(d.points, axis=0)
    near = np.sqrt(((d.points - center) ** 2).sum(axis=1)) < 0.05

    assert near.sum() >= 650


def test_generate_synthetic_rejects_invalid_input():
    for kwargs in [
        {"kind": "uniform", "size": 1, "n": 2},
        {"kind": "uniform", "size": 10, "n": 0},
        {"kind": "spiral", "size": 10, "n": 2},
        {"kind": "gaussian-clusters", "size": 10, "n": 2, "spread": 0.0},
    ]:
        with pytest.raises(UsageError):
            generate_synthetic(**kwargs)


def test_datasets_loader(tmp_path):
    path = write(tmp_path, "points.csv", "0,0\n3,4\n6,8\n")
    loader = DatasetsLoader({
        "file": path,
        "synthetic": {"kind": "uniform", "size": 100, "n": 3, "seed": 1},
    })

    with pytest.raises(Exception):
        loader.list_datasets()

    loader.load()

    datasets = loader.list_datasets()
    assert isinstance(datasets["file"]["dataset"], Dataset)
    assert datasets["synthetic"]["size"] == 100

    described = loader.describe_json()
    assert described[0] == {
        "dataset": "file",
        "origin": path,
        "size": 3,
        "n": 2,
        "min_variance": 6.0,
        "max_variance": 10.666667,
    }
    assert described[1]["origin"] == "uniform"
