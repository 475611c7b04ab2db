"""Experiment stages and the multi-seed pipeline.

Each seed runs simulate -> corrupt -> discover -> evaluate inside
``<out_dir>/seed-<seed>/``. Artifacts already written stay on disk when a later
stage fails; ``manifest.json`` records which stages finished.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from cutscope.config import config_to_dict
from cutscope.data import (
    GroundTruthGraph,
    ObservationMask,
    TimeSeriesPanel,
    ensure_aligned,
    load_csv,
    load_matrix,
    load_truth,
    save_csv,
    save_matrix,
    zoh_fill,
)
from cutscope.evaluation import (
    ReportOptions,
    ScoreReport,
    aggregate,
    report,
    save_edges,
    threshold_edges,
)
from cutscope.models import (
    CsvSource,
    DataSource,
    EvalConfig,
    Lorenz96Config,
    MissingConfig,
    RunConfig,
    VarConfig,
)
from cutscope.sim import apply_missing, gen_lorenz96, gen_var
from cutscope.trainer import FitResult, fit, imputation_rmse

STAGES = ("simulate", "corrupt", "discover", "evaluate")

T = TypeVar("T")

logger = logging.getLogger(__name__)


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SourceData:
    panel: TimeSeriesPanel
    mask: ObservationMask
    truth: GroundTruthGraph | None = None
    # complete values before corruption; simulators only
    clean: TimeSeriesPanel | None = None


@dataclass(frozen=True)
class SeedRun:
    seed: int
    directory: Path
    cpg_path: Path
    report_path: Path | None


@dataclass(frozen=True)
class PipelineResult:
    directory: Path
    runs: tuple[SeedRun, ...]
    aggregate_path: Path | None


def _write_json(payload: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_source(data: DataSource) -> SourceData:
    if isinstance(data, VarConfig):
        panel, truth = gen_var(data)
        return SourceData(panel, ObservationMask.full(panel.n_series, panel.length), truth, panel)
    if isinstance(data, Lorenz96Config):
        panel, truth = gen_lorenz96(data)
        return SourceData(panel, ObservationMask.full(panel.n_series, panel.length), truth, panel)
    return _load_csv_source(data)


def _load_csv_source(data: CsvSource) -> SourceData:
    panel, mask = load_csv(data.panel, data.delimiter, data.missing_token)
    if data.mask is not None:
        extra = ObservationMask(load_matrix(data.mask))
        ensure_aligned(panel, extra)
        mask = ObservationMask(mask.observed & extra.observed)
    truth = load_truth(data.truth) if data.truth is not None else None
    return SourceData(panel, mask, truth)


def corrupt(source: SourceData, missing: MissingConfig) -> SourceData:
    """Combine the configured missingness with the source mask and blank hidden values."""
    drawn = apply_missing(missing, source.panel)
    observed = source.mask.observed & drawn.observed
    hidden = np.where(observed, source.panel.values, 0.0)
    return replace(source, panel=TimeSeriesPanel(hidden), mask=ObservationMask(observed))


def discover(
    panel: TimeSeriesPanel,
    mask: ObservationMask,
    cfg: RunConfig,
    out_dir: Path,
    truth: GroundTruthGraph | None = None,
) -> FitResult:
    """Train on the panel and write cpg.csv, edges.csv and trace.json."""
    result = fit(
        panel, mask, cfg.train, cfg.model, truth=truth, checkpoint_dir=out_dir / "checkpoints"
    )
    save_matrix(result.cpg, out_dir / "cpg.csv")
    save_edges(threshold_edges(result.cpg), out_dir / "edges.csv")
    _write_json(result.trace.to_dict(), out_dir / "trace.json")
    return result


def evaluate(
    cpg_path: Path,
    truth_path: Path,
    out_dir: Path,
    eval_cfg: EvalConfig,
    config: dict[str, Any] | None = None,
) -> ScoreReport:
    options = ReportOptions(
        exclude_diagonal=eval_cfg.exclude_diagonal,
        heatmap_path=out_dir / "heatmap.svg" if eval_cfg.heatmap else None,
        config=config,
    )
    return report(cpg_path, truth_path, out_dir / "report.json", options)


class _StageRunner:
    def __init__(self, directory: Path, seed: int) -> None:
        self._directory = directory
        self._seed = seed
        self.manifest: dict[str, Any] = {
            "seed": seed,
            "stages": list(STAGES),
            "completed": [],
            "failed": None,
        }

    def run(self, stage: str, action: Callable[[], T]) -> T:
        logger.info("stage started", extra={"stage": stage, "seed": self._seed})
        try:
            result = action()
        except Exception as exc:
            self.manifest["failed"] = {"stage": stage, "error": str(exc)}
            self.write()
            logger.error(
                "stage failed", extra={"stage": stage, "seed": self._seed, "error": str(exc)}
            )
            raise PipelineStageError(stage, exc) from exc
        self.manifest["completed"].append(stage)
        self.write()
        return result

    def write(self) -> None:
        _write_json(self.manifest, self._directory / "manifest.json")


def run_seed(cfg: RunConfig, seed: int, directory: Path) -> SeedRun:
    seeded = cfg.for_seed(seed)
    runner = _StageRunner(directory, seed)
    embedded = config_to_dict(replace(cfg, seed=seed, seeds=()))
    _write_json(embedded, directory / "config.json")

    def simulate_stage() -> SourceData:
        source = load_source(seeded.data)
        if source.truth is not None:
            save_matrix(source.truth.adjacency, directory / "truth.csv")
        return source

    source = runner.run("simulate", simulate_stage)

    def corrupt_stage() -> SourceData:
        corrupted = corrupt(source, seeded.missing)
        save_csv(corrupted.panel, corrupted.mask, directory / "panel.csv")
        save_matrix(corrupted.mask.observed.astype(np.int8), directory / "mask.csv")
        runner.manifest["observed_fraction"] = corrupted.mask.observed_fraction
        return corrupted

    corrupted = runner.run("corrupt", corrupt_stage)

    def discover_stage() -> FitResult:
        result = discover(corrupted.panel, corrupted.mask, seeded, directory, corrupted.truth)
        if corrupted.clean is not None and not corrupted.mask.observed.all():
            clean = corrupted.clean.values
            runner.manifest["imputation_rmse"] = imputation_rmse(
                result.imputed, clean, corrupted.mask
            )
            runner.manifest["zoh_rmse"] = imputation_rmse(
                zoh_fill(corrupted.panel, corrupted.mask), clean, corrupted.mask
            )
        return result

    runner.run("discover", discover_stage)

    report_path: Path | None = None
    if corrupted.truth is None:
        logger.info(
            "no ground truth; evaluation skipped", extra={"stage": "evaluate", "seed": seed}
        )
    else:
        runner.run(
            "evaluate",
            lambda: evaluate(
                directory / "cpg.csv", directory / "truth.csv", directory, seeded.eval, embedded
            ),
        )
        report_path = directory / "report.json"
    return SeedRun(seed, directory, directory / "cpg.csv", report_path)


def run_pipeline(cfg: RunConfig, out_dir: Path) -> PipelineResult:
    """Run every configured seed in order; ``aggregate.json`` summarises multi-seed runs."""
    runs = tuple(run_seed(cfg, seed, out_dir / f"seed-{seed}") for seed in cfg.run_seeds)
    aggregate_path: Path | None = None
    reports = [run.report_path for run in runs if run.report_path is not None]
    if cfg.seeds and reports:
        payloads = [json.loads(path.read_text(encoding="utf-8")) for path in reports]
        summary = aggregate(payloads)
        summary["seeds"] = [run.seed for run in runs if run.report_path is not None]
        aggregate_path = _write_json(summary, out_dir / "aggregate.json")
        logger.info(
            "aggregate written",
            extra={"path": str(aggregate_path), "auroc": summary["include_diagonal"]},
        )
    return PipelineResult(out_dir, runs, aggregate_path)
