from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from cutscope.data import ObservationMask, TimeSeriesPanel, load_csv, load_matrix, save_csv
from cutscope.models import (
    CsvSource,
    MissingConfig,
    MissingKind,
    ModelConfig,
    RunConfig,
    TrainConfig,
    VarConfig,
)
from cutscope.pipeline import (
    PipelineStageError,
    SourceData,
    corrupt,
    discover,
    run_pipeline,
    run_seed,
)
from cutscope.ports import NumericalFailure

SEED_FILES = (
    "config.json",
    "truth.csv",
    "panel.csv",
    "mask.csv",
    "cpg.csv",
    "edges.csv",
    "trace.json",
    "report.json",
    "heatmap.svg",
    "manifest.json",
)


def _config(**overrides: object) -> RunConfig:
    settings: dict[str, object] = {
        "data": VarConfig(n_series=4, length=60, tau_max=2, density=0.3),
        "missing": MissingConfig(kind=MissingKind.RM, p=0.2),
        "model": ModelConfig(hidden_dim=4),
        "train": TrainConfig(epochs=2, batch=32, tau_max=2),
        "seeds": (1, 2),
    }
    settings.update(overrides)
    return RunConfig(**settings)  # type: ignore[arg-type]


def test_pipeline_writes_every_artifact_and_aggregates(tmp_path: Path) -> None:
    result = run_pipeline(_config(), tmp_path)

    assert [run.seed for run in result.runs] == [1, 2]
    for run in result.runs:
        for name in SEED_FILES:
            assert (run.directory / name).exists(), name
        manifest = json.loads((run.directory / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["completed"] == ["simulate", "corrupt", "discover", "evaluate"]
        assert manifest["failed"] is None
        assert 0.0 < manifest["observed_fraction"] < 1.0
        assert manifest["imputation_rmse"] >= 0.0
        assert "zoh_rmse" in manifest

    assert result.aggregate_path == tmp_path / "aggregate.json"
    summary = json.loads(result.aggregate_path.read_text(encoding="utf-8"))
    assert summary["runs"] == 2
    assert summary["seeds"] == [1, 2]
    assert len(summary["include_diagonal"]["values"]) == 2


def test_seed_directory_holds_a_reloadable_config(tmp_path: Path) -> None:
    run = run_seed(_config(), 1, tmp_path / "seed-1")

    embedded = json.loads((run.directory / "config.json").read_text(encoding="utf-8"))
    report = json.loads((run.directory / "report.json").read_text(encoding="utf-8"))

    assert embedded["seed"] == 1
    assert "seeds" not in embedded
    assert report["config"] == embedded


def test_pipeline_is_deterministic_per_seed(tmp_path: Path) -> None:
    config = _config(seeds=())
    first = run_pipeline(config, tmp_path / "a")
    second = run_pipeline(config, tmp_path / "b")

    np.testing.assert_array_equal(
        load_matrix(first.runs[0].cpg_path), load_matrix(second.runs[0].cpg_path)
    )
    assert first.aggregate_path is None


def test_failed_stage_is_recorded_in_manifest(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    def broken(*args: object) -> ObservationMask:
        raise ValueError("boom")

    monkeypatch.setattr("cutscope.pipeline.apply_missing", broken)

    with pytest.raises(PipelineStageError) as excinfo:
        run_seed(_config(), 1, tmp_path)

    assert excinfo.value.stage == "corrupt"
    assert isinstance(excinfo.value.cause, ValueError)
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["completed"] == ["simulate"]
    assert manifest["failed"] == {"stage": "corrupt", "error": "boom"}
    assert (tmp_path / "truth.csv").exists()
    assert not (tmp_path / "cpg.csv").exists()


def test_csv_source_without_truth_skips_evaluation(tmp_path: Path) -> None:
    values = np.random.default_rng(0).normal(size=(3, 40))
    observed = np.ones((3, 40), dtype=bool)
    observed[1, 10:14] = False
    save_csv(
        TimeSeriesPanel(np.where(observed, values, 0.0)),
        ObservationMask(observed),
        tmp_path / "input.csv",
    )
    config = _config(
        data=CsvSource(panel=tmp_path / "input.csv"),
        missing=MissingConfig(),
        seeds=(),
    )

    run = run_seed(config, 0, tmp_path / "out")

    assert run.report_path is None
    manifest = json.loads((run.directory / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["completed"] == ["simulate", "corrupt", "discover"]
    assert "imputation_rmse" not in manifest
    assert load_matrix(run.cpg_path).shape == (3, 3)


def test_corrupt_only_removes_entries(tmp_path: Path) -> None:
    panel = TimeSeriesPanel(np.arange(20.0).reshape(2, 10) + 1.0)
    observed = np.ones((2, 10), dtype=bool)
    observed[0, 0] = False
    source = SourceData(panel, ObservationMask(observed))

    corrupted = corrupt(source, MissingConfig(kind=MissingKind.RM, p=0.5, seed=3))

    assert not corrupted.mask.observed[0, 0]
    assert np.all(corrupted.mask.observed <= observed)
    np.testing.assert_array_equal(corrupted.panel.values[~corrupted.mask.observed], 0.0)
    kept = corrupted.mask.observed
    np.testing.assert_array_equal(corrupted.panel.values[kept], panel.values[kept])

    save_csv(corrupted.panel, corrupted.mask, tmp_path / "panel.csv")
    _, reloaded = load_csv(tmp_path / "panel.csv")
    np.testing.assert_array_equal(reloaded.observed, kept)


def test_diverging_run_leaves_a_diagnostic_without_periodic_checkpoints(
    tmp_path: Path,
) -> None:
    panel = TimeSeriesPanel(np.random.default_rng(0).normal(size=(4, 60)))
    config = _config(train=TrainConfig(epochs=2, batch=16, tau_max=2, learning_rate_phi=1e300))
    assert config.train.checkpoint_every == 0

    with pytest.raises(NumericalFailure):
        discover(panel, ObservationMask.full(4, 60), config, tmp_path)

    diagnostics = list((tmp_path / "checkpoints").glob("diagnostic-epoch-*.pt"))
    assert len(diagnostics) == 1
    assert not list((tmp_path / "checkpoints").glob("epoch-*.pt"))
    assert not (tmp_path / "cpg.csv").exists()
