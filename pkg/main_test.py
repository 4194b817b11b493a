import json

import pandas as pd
import pytest

import main
from lib.orchestrator import run_knn

SMALL_RUN = ["--synthetic", "mixture", "--size", "400", "--dims", "3", "--sample-f", "0.3", "--workers", "2"]


def test_run_writes_the_same_neighbors_for_every_mode(tmp_path):
    written = {}
    for mode in ["hybrid", "sparse", "dense", "oracle"]:
        out = tmp_path / f"{mode}.tsv"
        assert main.main(["run", *SMALL_RUN, "--mode", mode, "--rho", "0.3", "--out", str(out)]) == main.EXIT_OK
        written[mode] = out.read_bytes()

    assert len(set(written.values())) == 1

    rows = pd.read_csv(tmp_path / "hybrid.tsv", sep="\t", header=None)
    assert len(rows) == 400 * 5
    assert rows[0].is_monotonic_increasing


def test_run_with_verification_and_report(tmp_path):
    report = tmp_path / "report.json"

    status = main.main(["run", *SMALL_RUN, "--verify", "--report", str(report)])

    assert status == main.EXIT_OK
    content = json.loads(report.read_text())
    assert content["verification"]["mismatches"] == 0
    assert content["k"] == 5
    assert "phase_times" in content


def test_run_report_without_timings_is_byte_identical(tmp_path):
    first, second = tmp_path / "first.json", tmp_path / "second.json"

    for path in [first, second]:
        assert main.main(["run", *SMALL_RUN, "--no-timings", "--report", str(path)]) == main.EXIT_OK

    assert first.read_bytes() == second.read_bytes()


def test_run_writes_the_profile(tmp_path):
    profile = tmp_path / "profile.csv"

    assert main.main(["run", *SMALL_RUN, "--bins", "20", "--profile", str(profile)]) == main.EXIT_OK

    table = pd.read_csv(profile)
    assert len(table) == 20
    assert list(table.columns) == ["bin", "start", "end", "count", "cumulative"]


def test_run_reports_mismatches(tmp_path, monkeypatch):
    def tampered_run_knn(d, cfg):
        result = run_knn(d, cfg)
        result.neighbor_ids[0] = result.neighbor_ids[0][::-1]
        result.distances[0, 0] += 1.0
        return result

    monkeypatch.setattr(main, "run_knn", tampered_run_knn)

    assert main.main(["run", *SMALL_RUN, "--verify"]) == main.EXIT_MISMATCH


def test_usage_errors_exit_with_two(tmp_path):
    assert main.main(["run"]) == main.EXIT_USAGE
    assert main.main(["run", *SMALL_RUN, "--input", "points.csv"]) == main.EXIT_USAGE
    assert main.main(["run", "--input", str(tmp_path / "missing.csv")]) == main.EXIT_USAGE
    assert main.main(["run", *SMALL_RUN, "--k", "0"]) == main.EXIT_USAGE
    assert main.main(["run", *SMALL_RUN, "--policy", "tstatic"]) == main.EXIT_USAGE
    assert main.main(["run", *SMALL_RUN, "--verify", "--oracle-cap", "100"]) == main.EXIT_USAGE
    assert main.main(["search", "--synthetic", "uniform", "--size", "1000", "--search-f", "0.01"]) == main.EXIT_USAGE

    bad = tmp_path / "bad.csv"
    bad.write_text("0,0\nabc,1\n")
    assert main.main(["run", "--input", str(bad)]) == main.EXIT_USAGE

    with pytest.raises(SystemExit) as e:
        main.main(["unknown"])
    assert e.value.code == 2


def test_run_failures_exit_with_one(tmp_path):
    identical = tmp_path / "identical.csv"
    identical.write_text("1,1\n" * 60)

    assert main.main(["run", "--input", str(identical)]) == main.EXIT_RUN_FAILURE
    assert main.main(["run", "--input", str(identical), "--mode", "sparse"]) == main.EXIT_OK


def test_generate_and_describe_dataset(tmp_path):
    points = tmp_path / "points.bin"
    described = tmp_path / "described.csv"

    assert main.main(["generate", "--synthetic", "uniform", "--size", "50", "--dims", "4", "--out", str(points)]) == 0
    assert main.main(["describe_dataset", "--input", str(points), "--out", str(described)]) == 0

    table = pd.read_csv(described)
    assert table["size"].tolist() == [50]
    assert table["n"].tolist() == [4]


def test_search(tmp_path):
    candidates = tmp_path / "candidates.csv"
    report = tmp_path / "search.json"

    status = main.main([
        "search", "--synthetic", "mixture", "--size", "1000", "--sample-f", "0.2",
        "--search-f", "0.1", "--out", str(candidates), "--report", str(report),
    ])

    assert status == main.EXIT_OK
    assert len(pd.read_csv(candidates)) >= 1
    assert set(json.loads(report.read_text())) == {"beta", "gamma", "t1", "t2", "rho_model"}


def test_sweep_with_analysis(tmp_path):
    sweep_out = tmp_path / "sweep.csv"

    status = main.main([
        "sweep", *SMALL_RUN, "--ks", "3,5", "--gammas", "0,0.5",
        "--sweep-out", str(sweep_out), "--analysis-out", str(tmp_path / "sweep_{name}.csv"),
    ])

    assert status == main.EXIT_OK
    assert len(pd.read_csv(sweep_out)) == 4
    assert (tmp_path / "sweep_best_per_k.csv").exists()


def test_compare(tmp_path):
    report = tmp_path / "compare.json"

    assert main.main(["compare", *SMALL_RUN, "--report", str(report)]) == main.EXIT_OK
    assert json.loads(report.read_text())["identical"] is True
