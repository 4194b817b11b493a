import io
import logging
import os
import re
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lib.core import Dataset
from lib.errors import IngestionError, UsageError

CSV = "csv"
TSV = "tsv"
BINARY = "binary-f64"
FORMATS = [CSV, TSV, BINARY]

SEPARATORS = {CSV: ",", TSV: "\t"}
RAGGED_ROW = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")

UNIFORM = "uniform"
GAUSSIAN_CLUSTERS = "gaussian-clusters"
MIXTURE = "mixture"
SYNTHETIC_KINDS = [UNIFORM, GAUSSIAN_CLUSTERS, MIXTURE]

BINARY_HEADER = np.dtype("<u8")
BINARY_VALUE = np.dtype("<f8")

# share of the mixture drawn from the dense clusters, the rest is background
MIXTURE_DENSE_SHARE = 0.7
MIXTURE_SPREAD = 0.01


def infer_format(path: str) -> str:
    extension = os.path.splitext(path)[1].lower()
    if extension == ".csv":
        return CSV
    if extension == ".tsv":
        return TSV
    if extension in (".bin", ".f64"):
        return BINARY
    raise UsageError(f"cannot infer the format of `{path}`, pass one of {FORMATS}")


def _strip(value: Any) -> Any:
    return value.strip() if isinstance(value, str) else value


def _read_table(text: str, separator: str) -> pd.DataFrame:
    """Reads the non-blank lines as strings, indexed by their 1-based line number."""
    lines = text.splitlines()
    line_numbers = [i + 1 for i, line in enumerate(lines) if line.strip() != ""]
    if len(line_numbers) == 0:
        raise IngestionError("the file holds no points")

    body = "\n".join(lines[i - 1] for i in line_numbers)
    try:
        table = pd.read_csv(
            io.StringIO(body), sep=separator, header=None, dtype=str, keep_default_na=False
        )
    except pd.errors.ParserError as e:
        found = RAGGED_ROW.search(str(e))
        if found is None:
            raise IngestionError(f"malformed table: {str(e).strip()}") from e
        expected, line, got = (int(v) for v in found.groups())
        row = line_numbers[line - 1] if 0 < line <= len(line_numbers) else None
        raise IngestionError(f"expected {expected} fields, got {got}", row=row) from e

    table.index = line_numbers
    return table.map(_strip)


def _parse_text(text: str, separator: str) -> Tuple[np.ndarray, np.ndarray]:
    table = _read_table(text, separator)

    # the parser pads short rows with empty fields
    missing = table.isna() | table.eq("")
    numeric = table.apply(pd.to_numeric, errors="coerce")
    nan_literal = table.map(lambda v: isinstance(v, str) and v.lower().lstrip("+-") == "nan")
    invalid = missing | (numeric.isna() & ~nan_literal)

    bad = np.argwhere(invalid.to_numpy())
    if len(bad) > 0:
        r, c = bad[0]
        row = int(table.index[r])
        if missing.iat[r, c]:
            raise IngestionError("missing or empty field", row=row, column=int(c) + 1)
        raise IngestionError(f"non-numeric field `{table.iat[r, c]}`", row=row, column=int(c) + 1)

    # numpy rounds every field correctly, so exported text reads back bit for bit
    try:
        points = table.to_numpy(dtype=str).astype(np.float64)
    except ValueError as e:
        raise IngestionError(f"non-numeric field: {e}") from e

    return points, table.index.to_numpy(dtype=np.int64)



def _parse_binary(raw: bytes) -> np.ndarray:
    if len(raw) < 2 * BINARY_HEADER.itemsize:
        raise IngestionError(f"binary header needs 16 bytes, the file has {len(raw)}")

    size, n = (int(v) for v in np.frombuffer(raw[:16], dtype=BINARY_HEADER))
    body = raw[16:]
    expected = size * n * BINARY_VALUE.itemsize
    if len(body) != expected:
        raise IngestionError(
            f"header announces {size} x {n} values ({expected} bytes), body has {len(body)} bytes"
        )

    return np.frombuffer(body, dtype=BINARY_VALUE).reshape(size, n).astype(np.float64)


def ingest_dataset(path: str, format: Optional[str] = None) -> Dataset:
    """
    Reads a point set. Text formats have one point per line and no header;
    the binary format is a little-endian (|D|, n) uint64 header followed by
    row-major float64 values. Locations in errors are 1-based.
    """
    if format is None:
        format = infer_format(path)
    if format not in FORMATS:
        raise UsageError(f"unknown dataset format `{format}`, expected one of {FORMATS}")

    try:
        if format == BINARY:
            with open(path, "rb") as f:
                points = _parse_binary(f.read())
            rows = np.arange(1, points.shape[0] + 1)
        else:
            with open(path, "r", encoding="utf8") as f:
                points, rows = _parse_text(f.read(), SEPARATORS[format])
    except OSError as e:
        raise IngestionError(f"cannot read `{path}`: {e.strerror}") from e

    if points.shape[0] < 1 or points.shape[1] < 1:
        raise IngestionError("the file holds no points")

    bad = np.argwhere(~np.isfinite(points))
    if len(bad) > 0:
        r, c = bad[0]
        raise IngestionError("non-finite value", row=int(rows[r]), column=int(c) + 1)

    log_fields = {"path": path, "format": format, "size": points.shape[0], "n": points.shape[1]}
    logging.info(f"dataset ingested | {log_fields}")

    return Dataset(points)


def export_binary(d: Dataset, path: str) -> None:
    header = np.array([d.size, d.n], dtype=BINARY_HEADER)
    body = np.ascontiguousarray(d.metric_points, dtype=BINARY_VALUE)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(body.tobytes())


def export_text(d: Dataset, path: str, format: str = CSV) -> None:
    # pandas writes the shortest repr of each float, which reads back exactly
    pd.DataFrame(d.metric_points).to_csv(path, sep=SEPARATORS[format], header=False, index=False)


def generate_synthetic(
    kind: str,
    size: int,
    n: int,
    seed: int = 0,
    clusters: int = 3,
    spread: float = 0.05,
) -> Dataset:
    """
    Points in the unit cube. `mixture` combines tight gaussian clusters with
    a uniform background, so a single run has both dense and sparse regions.
    """
    if size < 2:
        raise UsageError("a synthetic dataset needs at least two points")
    if n < 1:
        raise UsageError("a synthetic dataset needs at least one dimension")
    if kind not in SYNTHETIC_KINDS:
        raise UsageError(f"unknown synthetic kind `{kind}`, expected one of {SYNTHETIC_KINDS}")
    if clusters < 1 or spread <= 0:
        raise UsageError("clusters must be >= 1 and spread must be > 0")

    rng = np.random.default_rng(seed)

    if kind == UNIFORM:
        points = rng.uniform(0.0, 1.0, size=(size, n))

    elif kind == GAUSSIAN_CLUSTERS:
        centers = rng.uniform(0.0, 1.0, size=(clusters, n))
        labels = rng.integers(0, clusters, size=size)
        points = centers[labels] + rng.normal(0.0, spread, size=(size, n))

    else:
        dense_size = int(size * MIXTURE_DENSE_SHARE)
        centers = rng.uniform(0.0, 1.0, size=(clusters, n))
        labels = rng.integers(0, clusters, size=dense_size)
        dense = centers[labels] + rng.normal(0.0, MIXTURE_SPREAD, size=(dense_size, n))
        background = rng.uniform(0.0, 1.0, size=(size - dense_size, n))
        points = rng.permutation(np.vstack([dense, background]))

    return Dataset(points)


class DatasetsLoader:
    """
    Loads named datasets, either files or synthetic specs such as
    `{"kind": "mixture", "size": 1000, "n": 4, "seed": 0}`.
    """

    def __init__(self, sources: Dict[str, Any]) -> None:
        self.sources = sources
        self.loaded_datasets: Dict[str, Dict[str, Any]] = {}

    def load(self) -> None:
        self.loaded_datasets = {}

        for name, source in self.sources.items():
            logging.info(f"getting dataset `{name}`")

            if isinstance(source, str):
                d = ingest_dataset(source)
                origin = source
            else:
                d = generate_synthetic(**source)
                origin = source["kind"]

            self.loaded_datasets[name] = {
                "dataset": d,
                "origin": origin,
                "size": d.size,
                "n": d.n,
            }

        logging.info("finished getting all datasets")

    def list_datasets(self) -> Dict[str, Any]:
        if len(self.loaded_datasets) == 0:
            raise Exception("no datasets loaded")

        return self.loaded_datasets

    def describe_log(self) -> None:
        for result in self.describe_json():
            logging.info(f"information for dataset: {result}")

    def describe_json(self) -> List[Dict[str, Any]]:
        results = []

        for name, info in self.loaded_datasets.items():
            variances = info["dataset"].variances()
            results.append(
                {
                    "dataset": name,
                    "origin": info["origin"],
                    "size": info["size"],
                    "n": info["n"],
                    "min_variance": round(float(variances.min()), 6),
                    "max_variance": round(float(variances.max()), 6),
                }
            )

        return results
