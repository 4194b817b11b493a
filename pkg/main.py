import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

from lib.core import Dataset
from lib.errors import (
    IngestionError,
    OracleCapError,
    RunError,
    SampleTooSmallError,
    UsageError,
)
from lib.orchestrator import compare_engines, parameter_search, run_knn, verify_against_oracle
from lib.types import EngineMode, GranularityPolicy, RunConfig
from metrics.analysis import analyse_sweep
from metrics.datasets import (
    BINARY,
    FORMATS,
    SYNTHETIC_KINDS,
    DatasetsLoader,
    export_binary,
    export_text,
    generate_synthetic,
    infer_format,
    ingest_dataset,
)
from metrics.pipeline import SweepGrid, SweepPipeline, SweepRepository
from metrics.support import build_run_report, write_neighbors_tsv, write_run_report


def setup_logging() -> None:
    LOGGING_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"
    logging.basicConfig(level=logging.INFO, format=LOGGING_FORMAT)


EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISMATCH = 3

DEFAULT_RUN_RHO = 0.0
DEFAULT_SEARCH_RHO = 0.5
DEFAULT_SEARCH_F = 0.01
SWEEP_RESULTS_FILE = "./data/sweep.csv"
SWEEP_ANALYSIS_FILE = "./data/sweep_{name}.csv"

RUN = "run"
SWEEP = "sweep"
SEARCH = "search"
GENERATE = "generate"
DESCRIBE_DATASET = "describe_dataset"
COMPARE = "compare"


def parse_list(text: str, cast: Callable[[str], Any]) -> List[Any]:
    try:
        return [cast(value.strip()) for value in text.split(",") if value.strip() != ""]
    except ValueError as e:
        raise UsageError(f"cannot parse the list `{text}`") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="exact hybrid KNN self-join")
    parser.add_argument(
        "task",
        help="action to be executed",
        choices=[RUN, SWEEP, SEARCH, GENERATE, DESCRIBE_DATASET, COMPARE],
        action="store",
    )

    source = parser.add_argument_group("dataset")
    source.add_argument("--input", help="dataset file")
    source.add_argument("--format", choices=FORMATS, help="dataset format, inferred from the extension if absent")
    source.add_argument("--synthetic", choices=SYNTHETIC_KINDS, help="generate the dataset instead of reading it")
    source.add_argument("--size", type=int, default=10000, help="synthetic dataset size")
    source.add_argument("--dims", type=int, default=2, help="synthetic dataset dimensionality")
    source.add_argument("--clusters", type=int, default=3)
    source.add_argument("--spread", type=float, default=0.05)

    run = parser.add_argument_group("run")
    run.add_argument("--k", type=int, default=5)
    run.add_argument("--m", type=int, default=None, help="indexed dimensions, min(6, n) if absent")
    run.add_argument("--beta", type=float, default=0.0)
    run.add_argument("--gamma", type=float, default=0.0)
    run.add_argument("--rho", type=float, default=None)
    run.add_argument("--policy", default="tstatic:8", help="tstatic:W or tdynamic:T")
    run.add_argument("--striping", choices=["interleaved", "contiguous"], default="interleaved")
    run.add_argument("--buffer-size", type=int, default=10**6)
    run.add_argument("--bins", type=int, default=100)
    run.add_argument("--sample-f", type=float, default=0.01, help="fraction of queries sampled for the histogram")
    run.add_argument("--batch-sample-f", type=float, default=0.01)
    run.add_argument("--workers", type=int, default=4)
    run.add_argument("--kernel-threads", type=int, default=4)
    run.add_argument("--mode", choices=[m.value for m in EngineMode], default=EngineMode.HYBRID.value)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--eps", type=float, default=None, help="skip the selection and use this eps")
    run.add_argument("--n-batches", type=int, default=None)
    run.add_argument("--duplicate-index", action="store_true")
    run.add_argument("--oracle-cap", type=int, default=5000)

    output = parser.add_argument_group("output")
    output.add_argument("--out", help="neighbor TSV, dataset file or table, depending on the task")
    output.add_argument("--report", help="run report JSON")
    output.add_argument("--profile", help="histogram report CSV")
    output.add_argument("--verify", action="store_true", help="compare against the brute-force oracle")
    output.add_argument("--no-timings", action="store_true", help="leave timings out of the report")

    sweep = parser.add_argument_group("sweep and search")
    sweep.add_argument("--ks", default="5")
    sweep.add_argument("--betas", default="0")
    sweep.add_argument("--gammas", default="0")
    sweep.add_argument("--rhos", default="0.5")
    sweep.add_argument("--policies", default="tstatic:8")
    sweep.add_argument("--sweep-out", default=SWEEP_RESULTS_FILE)
    sweep.add_argument("--refine-rho", action="store_true", help="rerun rho = 0.5 cells with rho_model")
    sweep.add_argument(
        "--analysis-out", nargs="?", const=SWEEP_ANALYSIS_FILE, default=None, help="file name pattern with `{name}`"
    )
    sweep.add_argument("--search-f", type=float, default=DEFAULT_SEARCH_F)

    return parser


def load_dataset(args: argparse.Namespace) -> Dataset:
    if args.input is not None and args.synthetic is not None:
        raise UsageError("--input and --synthetic are mutually exclusive")
    if args.input is None and args.synthetic is None:
        raise UsageError("one of --input or --synthetic is required")

    if args.input is not None:
        return ingest_dataset(args.input, args.format)

    return generate_synthetic(
        args.synthetic, args.size, args.dims, args.seed, args.clusters, args.spread
    )


def build_config(args: argparse.Namespace, default_rho: float = DEFAULT_RUN_RHO) -> RunConfig:
    policy = GranularityPolicy.parse(args.policy)
    policy = GranularityPolicy(policy.mode, policy.value, args.striping)

    return RunConfig(
        k=args.k,
        m=args.m,
        beta=args.beta,
        gamma=args.gamma,
        rho=default_rho if args.rho is None else args.rho,
        policy=policy,
        buffer_size=args.buffer_size,
        n_bins=args.bins,
        histogram_fraction=args.sample_f,
        batch_sample_fraction=args.batch_sample_f,
        seed=args.seed,
        workers=args.workers,
        kernel_threads=args.kernel_threads,
        duplicate_index=args.duplicate_index,
        engine_mode=EngineMode(args.mode),
        eps_override=args.eps,
        n_batches_override=args.n_batches,
        oracle_cap=args.oracle_cap,
    )


def run_task(args: argparse.Namespace) -> int:
    d = load_dataset(args)
    cfg = build_config(args)
    result = run_knn(d, cfg)

    status = EXIT_OK
    verification: Optional[Dict[str, Any]] = None
    if args.verify:
        verification_report = verify_against_oracle(result, d, result.k, cfg.oracle_cap)
        verification = verification_report.describe_json()
        if not verification_report.ok:
            logging.error(f"oracle verification failed | {verification}")
            status = EXIT_MISMATCH

    if args.out is not None:
        write_neighbors_tsv(result, args.out)

    if args.report is not None:
        report = build_run_report(result, d, cfg, not args.no_timings, verification)
        write_run_report(report, args.report)

    if args.profile is not None:
        if result.diagnostics.profile is None:
            logging.warning("no histogram was built for this run, skipping the profile report")
        else:
            result.diagnostics.profile.to_frame().to_csv(args.profile, index=False)

    log_fields = {"queries": len(result), "k": result.k, **result.provenance_counts()}
    logging.info(f"run finished | {log_fields}")
    return status


def sweep_task(args: argparse.Namespace) -> int:
    d = load_dataset(args)
    grid = SweepGrid(
        ks=parse_list(args.ks, int),
        betas=parse_list(args.betas, float),
        gammas=parse_list(args.gammas, float),
        rhos=parse_list(args.rhos, float),
        policies=parse_list(args.policies, str),
    )

    repository = SweepRepository(args.sweep_out)
    pipeline = SweepPipeline(repository, d, grid, build_config(args))
    pipeline.run()
    if args.refine_rho:
        pipeline.run_rho_refinement()

    repository.describe_log()
    if args.analysis_out is not None:
        analyse_sweep(repository.to_frame(), args.analysis_out)

    return EXIT_OK


def search_task(args: argparse.Namespace) -> int:
    d = load_dataset(args)
    cfg = build_config(args, default_rho=DEFAULT_SEARCH_RHO)

    outcome = parameter_search(d, cfg.k, args.search_f, cfg=cfg)
    logging.info(f"search finished | {outcome.describe_json()}")

    if args.out is not None:
        outcome.candidates.to_csv(args.out, index=False)
    if args.report is not None:
        with open(args.report, "w", encoding="utf8") as f:
            f.write(json.dumps(outcome.describe_json(), sort_keys=True, indent=2) + "\n")

    return EXIT_OK


def generate_task(args: argparse.Namespace) -> int:
    if args.out is None:
        raise UsageError("generate needs --out")
    if args.synthetic is None:
        raise UsageError("generate needs --synthetic")

    d = load_dataset(args)
    format = args.format if args.format is not None else infer_format(args.out)
    if format == BINARY:
        export_binary(d, args.out)
    else:
        export_text(d, args.out, format)

    log_fields = {"path": args.out, "format": format, "size": d.size, "n": d.n}
    logging.info(f"dataset written | {log_fields}")
    return EXIT_OK


def describe_dataset_task(args: argparse.Namespace) -> int:
    if args.input is not None and args.synthetic is not None:
        raise UsageError("--input and --synthetic are mutually exclusive")

    if args.input is not None:
        sources = {args.input: args.input}
    elif args.synthetic is not None:
        sources = {
            args.synthetic: {
                "kind": args.synthetic,
                "size": args.size,
                "n": args.dims,
                "seed": args.seed,
                "clusters": args.clusters,
                "spread": args.spread,
            }
        }
    else:
        raise UsageError("one of --input or --synthetic is required")

    loader = DatasetsLoader(sources)
    loader.load()
    loader.describe_log()

    if args.out is not None:
        pd.DataFrame(loader.describe_json()).to_csv(args.out, index=False)

    return EXIT_OK


def compare_task(args: argparse.Namespace) -> int:
    d = load_dataset(args)
    comparison = compare_engines(d, build_config(args))

    if args.report is not None:
        with open(args.report, "w", encoding="utf8") as f:
            f.write(json.dumps(comparison, sort_keys=True, indent=2) + "\n")

    return EXIT_OK


TASKS: Dict[str, Callable[[argparse.Namespace], int]] = {
    RUN: run_task,
    SWEEP: sweep_task,
    SEARCH: search_task,
    GENERATE: generate_task,
    DESCRIBE_DATASET: describe_dataset_task,
    COMPARE: compare_task,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        return TASKS[args.task](args)
    except (UsageError, IngestionError, OracleCapError, SampleTooSmallError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except RunError as e:
        logging.error(f"{e} | cause: {e.__cause__}")
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    setup_logging()
    sys.exit(main())
