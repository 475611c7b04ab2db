from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from cutscope.checkpoint import CheckpointFormatError
from cutscope.config import ConfigError, config_to_dict, has_errors, load_config, validate_config
from cutscope.data import (
    GroundTruthGraph,
    ObservationMask,
    PanelFormatError,
    ShapeMismatchError,
    TimeSeriesPanel,
    ensure_aligned,
    load_csv,
    load_matrix,
    load_truth,
    save_csv,
    save_matrix,
)
from cutscope.evaluation import (
    DegenerateTruthError,
    ReportOptions,
    ReportSchemaError,
    aggregate,
    compare_to_reference,
    report,
    validate_report_payload,
)
from cutscope.locking import LockError, OutputDirLock
from cutscope.logging_utils import configure_logging
from cutscope.models import CsvSource, LoggingConfig, RunConfig
from cutscope.pipeline import (
    PipelineStageError,
    SourceData,
    corrupt,
    discover,
    load_source,
    run_pipeline,
)
from cutscope.ports import NumericalFailure
from cutscope.predictor import measure_step_time

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

_IO_ERRORS = (
    OSError,
    json.JSONDecodeError,
    PanelFormatError,
    ShapeMismatchError,
    DegenerateTruthError,
    ReportSchemaError,
    CheckpointFormatError,
    LockError,
)


def _add_csv_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--delimiter", default=None)
    parser.add_argument("--missing-token", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuts-scope")
    parser.add_argument("--log-format", choices=("json", "text"), default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)

    validate = subparsers.add_parser("validate")
    validate.add_argument("--config", required=True, type=Path)

    simulate = subparsers.add_parser("simulate")
    simulate.add_argument("--config", required=True, type=Path)
    simulate.add_argument("--out-dir", required=True, type=Path)

    corrupt_parser = subparsers.add_parser("corrupt")
    corrupt_parser.add_argument("--config", required=True, type=Path)
    corrupt_parser.add_argument("--panel", required=True, type=Path)
    _add_csv_options(corrupt_parser)
    corrupt_parser.add_argument("--out-dir", required=True, type=Path)

    discover_parser = subparsers.add_parser("discover")
    discover_parser.add_argument("--config", required=True, type=Path)
    discover_parser.add_argument("--panel", required=True, type=Path)
    _add_csv_options(discover_parser)
    discover_parser.add_argument("--mask", type=Path)
    discover_parser.add_argument("--truth", type=Path)
    discover_parser.add_argument("--out-dir", required=True, type=Path)

    evaluate = subparsers.add_parser("evaluate")
    evaluate.add_argument("--cpg", required=True, type=Path)
    target = evaluate.add_mutually_exclusive_group(required=True)
    target.add_argument("--truth", type=Path)
    target.add_argument("--reference", type=Path)
    evaluate.add_argument("--out-dir", required=True, type=Path)
    evaluate.add_argument("--exclude-diagonal", action="store_true")
    evaluate.add_argument("--no-heatmap", action="store_true")

    report_parser = subparsers.add_parser("report")
    report_parser.add_argument("--reports", required=True, nargs="+", type=Path)
    report_parser.add_argument("--out-dir", required=True, type=Path)

    pipeline = subparsers.add_parser("pipeline")
    pipeline.add_argument("--config", required=True, type=Path)
    pipeline.add_argument("--out-dir", required=True, type=Path)

    benchmark = subparsers.add_parser("benchmark")
    benchmark.add_argument("--sizes", nargs="+", type=int, default=[32, 128])
    benchmark.add_argument("--hidden-dim", type=int, default=32)
    benchmark.add_argument("--batch", type=int, default=64)
    benchmark.add_argument("--history", type=int, default=3)
    benchmark.add_argument("--repeats", type=int, default=5)
    benchmark.add_argument("--seed", type=int, default=0)
    benchmark.add_argument("--out-dir", required=True, type=Path)
    return parser


def _write_json(payload: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _setup_logging(logging_cfg: LoggingConfig, log_format: str | None) -> None:
    use_json = logging_cfg.json if log_format is None else log_format == "json"
    configure_logging(logging_cfg.level, use_json)


def _run_validate(args: argparse.Namespace) -> int:
    diagnostics = validate_config(args.config)
    for diagnostic in diagnostics:
        print(diagnostic)
    if has_errors(diagnostics):
        return EXIT_CONFIG
    print("configuration valid")
    return EXIT_OK


def _run_simulate(args: argparse.Namespace, cfg: RunConfig) -> int:
    seeded = cfg.for_seed(cfg.seed)
    source = load_source(seeded.data)
    save_csv(source.panel, source.mask, args.out_dir / "panel.csv")
    if source.truth is not None:
        save_matrix(source.truth.adjacency, args.out_dir / "truth.csv")
    _write_json(config_to_dict(replace(cfg, seeds=())), args.out_dir / "config.json")
    return EXIT_OK


def _load_panel(
    args: argparse.Namespace, cfg: RunConfig
) -> tuple[TimeSeriesPanel, ObservationMask]:
    """Read ``--panel`` with the CSV options of ``data.csv``; flags take precedence."""
    source = cfg.data if isinstance(cfg.data, CsvSource) else CsvSource(panel=args.panel)
    delimiter = source.delimiter if args.delimiter is None else args.delimiter
    token = source.missing_token if args.missing_token is None else args.missing_token
    return load_csv(args.panel, delimiter=delimiter, missing_token=token)


def _run_corrupt(args: argparse.Namespace, cfg: RunConfig) -> int:
    panel, mask = _load_panel(args, cfg)
    corrupted = corrupt(SourceData(panel, mask), cfg.for_seed(cfg.seed).missing)
    save_csv(corrupted.panel, corrupted.mask, args.out_dir / "panel.csv")
    save_matrix(corrupted.mask.observed.astype(np.int8), args.out_dir / "mask.csv")
    return EXIT_OK


def _run_discover(args: argparse.Namespace, cfg: RunConfig) -> int:
    panel, mask = _load_panel(args, cfg)
    if args.mask is not None:
        extra = ObservationMask(load_matrix(args.mask))
        ensure_aligned(panel, extra)
        mask = ObservationMask(mask.observed & extra.observed)
    truth: GroundTruthGraph | None = load_truth(args.truth) if args.truth is not None else None
    discover(panel, mask, cfg.for_seed(cfg.seed), args.out_dir, truth)
    return EXIT_OK


def _run_evaluate(args: argparse.Namespace) -> int:
    if args.reference is not None:
        comparison = compare_to_reference(load_matrix(args.cpg), load_matrix(args.reference))
        _write_json(comparison.to_dict(), args.out_dir / "comparison.json")
        return EXIT_OK
    options = ReportOptions(
        exclude_diagonal=args.exclude_diagonal,
        heatmap_path=None if args.no_heatmap else args.out_dir / "heatmap.svg",
    )
    report(args.cpg, args.truth, args.out_dir / "report.json", options)
    return EXIT_OK


def _run_report(args: argparse.Namespace) -> int:
    payloads = [json.loads(path.read_text(encoding="utf-8")) for path in args.reports]
    for payload in payloads:
        validate_report_payload(payload)
    summary = aggregate(payloads)
    summary["reports"] = [str(path) for path in args.reports]
    _write_json(summary, args.out_dir / "aggregate.json")
    return EXIT_OK


def _run_benchmark(args: argparse.Namespace) -> int:
    rows = [
        {
            "n_series": size,
            "seconds_per_step": measure_step_time(
                size, args.hidden_dim, args.batch, args.history, args.repeats, args.seed
            ),
        }
        for size in args.sizes
    ]
    _write_json(
        {
            "hidden_dim": args.hidden_dim,
            "batch": args.batch,
            "history": args.history,
            "steps": rows,
        },
        args.out_dir / "benchmark.json",
    )
    return EXIT_OK


def _fallback_data(args: argparse.Namespace) -> CsvSource | None:
    panel = getattr(args, "panel", None)
    return None if panel is None else CsvSource(panel=panel)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineStageError):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericalFailure):
        return EXIT_NUMERIC
    if isinstance(exc, _IO_ERRORS):
        return EXIT_IO
    return EXIT_CONFIG


def main() -> int:
    parser = build_parser()
    args = parser.parse_args()

    if args.command == "validate":
        try:
            return _run_validate(args)
        except ConfigError as exc:
            print(f"Configuration error: {exc}")
            return EXIT_CONFIG

    cfg: RunConfig | None = None
    if getattr(args, "config", None) is not None:
        try:
            cfg = load_config(args.config, _fallback_data(args))
        except ConfigError as exc:
            print(f"Configuration error: {exc}")
            return EXIT_CONFIG

    try:
        _setup_logging(cfg.logging if cfg is not None else LoggingConfig(), args.log_format)
    except ConfigError as exc:
        print(f"Configuration error: {exc}")
        return EXIT_CONFIG
    logger = logging.getLogger(__name__)

    try:
        with OutputDirLock(args.out_dir):
            if args.command == "simulate" and cfg is not None:
                code = _run_simulate(args, cfg)
            elif args.command == "corrupt" and cfg is not None:
                code = _run_corrupt(args, cfg)
            elif args.command == "discover" and cfg is not None:
                code = _run_discover(args, cfg)
            elif args.command == "pipeline" and cfg is not None:
                run_pipeline(cfg, args.out_dir)
                code = EXIT_OK
            elif args.command == "evaluate":
                code = _run_evaluate(args)
            elif args.command == "report":
                code = _run_report(args)
            elif args.command == "benchmark":
                code = _run_benchmark(args)
            else:
                parser.error("Unsupported command")
    except (ValueError, RuntimeError, OSError) as exc:
        code = _exit_code(exc)
        logger.error(
            "command failed",
            extra={"command": args.command, "error": str(exc), "exit_code": code},
        )
        print(f"{args.command} failed: {exc}")
        return code

    logger.info("command finished", extra={"command": args.command, "path": str(args.out_dir)})
    return code


if __name__ == "__main__":
    raise SystemExit(main())
