from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pytest
import torch

from cutscope.checkpoint import load_checkpoint
from cutscope.data import GroundTruthGraph, ObservationMask, TimeSeriesPanel, WindowError
from cutscope.graph import GraphParameters
from cutscope.models import GumbelSchedule, Lorenz96Config, ModelConfig, TrainConfig, VarConfig
from cutscope.predictor import NonFiniteGradientError
from cutscope.sim import gen_lorenz96, gen_var
from cutscope.trainer import (
    AllMaskedBatchError,
    CutsPlusTrainer,
    ImputationState,
    NonFiniteLossError,
    fit,
    imputation_rmse,
    impute_sliding,
    loss_data,
    loss_graph,
    masked_mse,
)

SMALL_MODEL = ModelConfig(hidden_dim=4)


def _panel(n_series: int = 4, length: int = 40, seed: int = 0) -> TimeSeriesPanel:
    return TimeSeriesPanel(np.random.default_rng(seed).normal(size=(n_series, length)))


def _train(**overrides: object) -> TrainConfig:
    settings: dict[str, object] = {"epochs": 2, "batch": 16, "log_every": 1, "seed": 5}
    settings.update(overrides)
    return TrainConfig(**settings)  # type: ignore[arg-type]


class RecordingPredictor:
    def __init__(self, value: float) -> None:
        self.value = value
        self.histories: list[npt.NDArray[np.float64]] = []

    def __call__(self, history: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        self.histories.append(history.copy())
        return np.full(history.shape[0], self.value)


def test_masked_mse_averages_observed_entries_only() -> None:
    predictions = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64)
    targets = torch.tensor([[0.0, 0.0], [3.0, 100.0]], dtype=torch.float64)
    mask = torch.tensor([[1.0, 1.0], [1.0, 0.0]], dtype=torch.float64)

    assert float(masked_mse(predictions, targets, mask)) == pytest.approx(5.0 / 3.0)
    assert float(loss_data(predictions, targets, mask)) == pytest.approx(5.0 / 3.0)


def test_masked_mse_rejects_fully_masked_batch() -> None:
    zeros = torch.zeros((2, 2), dtype=torch.float64)
    with pytest.raises(AllMaskedBatchError):
        masked_mse(zeros, zeros, zeros)


def test_loss_graph_adds_sparsity_penalty() -> None:
    predictions = torch.tensor([[1.0]], dtype=torch.float64)
    targets = torch.tensor([[0.0]], dtype=torch.float64)
    mask = torch.ones((1, 1), dtype=torch.float64)
    params = GraphParameters(
        logits=torch.tensor([[0.0, 2.0]], dtype=torch.float64),
        temperature=1.0,
        lambda_sparsity=0.5,
    )

    expected = 1.0 + 0.5 * (0.5 + 1.0 / (1.0 + np.exp(-2.0)))

    assert float(loss_graph(predictions, targets, mask, params)) == pytest.approx(expected)


def test_impute_sliding_blends_missing_entries_left_to_right() -> None:
    panel = TimeSeriesPanel(np.array([[0.0, 1.0, 2.0, 0.0, 0.0, 5.0]]))
    mask = ObservationMask(np.array([[False, True, True, False, False, True]]))
    state = ImputationState.seed(panel, mask)
    predictor = RecordingPredictor(10.0)

    updated = impute_sliding(state, predictor, panel, mask, history=2, momentum=0.9, epoch=3)

    first = 0.9 * 2.0 + 0.1 * 10.0
    second = 0.9 * 2.0 + 0.1 * 10.0
    np.testing.assert_allclose(updated.filled, [[0.0, 1.0, 2.0, first, second, 5.0]])
    assert updated.epoch_of_last_update == 3
    assert len(predictor.histories) == 2
    np.testing.assert_allclose(predictor.histories[0], [[1.0, 2.0]])
    np.testing.assert_allclose(predictor.histories[1], [[2.0, first]])
    np.testing.assert_allclose(state.filled, [[0.0, 1.0, 2.0, 2.0, 2.0, 5.0]])


def test_impute_sliding_with_full_momentum_keeps_values() -> None:
    panel = TimeSeriesPanel(np.array([[1.0, 0.0, 0.0, 4.0]]))
    mask = ObservationMask(np.array([[True, False, False, True]]))
    state = ImputationState.seed(panel, mask)

    updated = impute_sliding(state, RecordingPredictor(-7.0), panel, mask, history=1, momentum=1.0)

    np.testing.assert_array_equal(updated.filled, state.filled)
    assert updated.epoch_of_last_update == -1


def test_imputation_rmse_scores_missing_entries_only() -> None:
    mask = ObservationMask(np.array([[True, False], [False, True]]))
    filled = np.array([[9.0, 1.0], [2.0, 9.0]])
    reference = np.array([[0.0, 0.0], [0.0, 0.0]])

    assert imputation_rmse(filled, reference, mask) == pytest.approx(np.sqrt(2.5))
    assert imputation_rmse(filled, reference, ObservationMask.full(2, 2)) == 0.0


def test_trainer_rejects_panel_shorter_than_window() -> None:
    panel = _panel(length=3)
    with pytest.raises(WindowError):
        CutsPlusTrainer(panel, ObservationMask.full(4, 3), _train(), SMALL_MODEL)


def test_trainer_rejects_panel_without_observed_targets() -> None:
    observed = np.zeros((4, 10), dtype=bool)
    observed[:, :3] = True
    with pytest.raises(WindowError, match="no observed entry"):
        CutsPlusTrainer(_panel(length=10), ObservationMask(observed), _train(), SMALL_MODEL)


def test_prediction_stage_leaves_graph_logits_untouched() -> None:
    panel = _panel()
    trainer = CutsPlusTrainer(panel, ObservationMask.full(4, 40), _train(), SMALL_MODEL)
    logits = trainer.params.logits.detach().clone()
    weights = trainer.predictor.decoder.head_weight.detach().clone()

    result = trainer.prediction_stage_epoch()

    assert result.loss > 0
    torch.testing.assert_close(trainer.params.logits.detach(), logits)
    assert not torch.equal(trainer.predictor.decoder.head_weight.detach(), weights)


def test_true_graph_override_beats_the_mean_predictor() -> None:
    panel, truth = gen_lorenz96(Lorenz96Config(n_series=8, length=400, seed=3))
    cfg = _train(batch=32, learning_rate_phi=1e-2)
    trainer = CutsPlusTrainer(panel, ObservationMask.full(8, 400), cfg, ModelConfig(hidden_dim=16))
    graph = torch.from_numpy(truth.adjacency.astype(np.float64))
    logits = trainer.params.logits.detach().clone()

    for _ in range(25):
        result = trainer.prediction_stage_epoch(graph_override=graph)

    values = panel.values
    scaled = (values - values.mean(axis=1, keepdims=True)) / values.std(axis=1, keepdims=True)
    mean_rmse = float(np.sqrt(np.mean(scaled[:, cfg.history :] ** 2)))
    assert np.sqrt(result.loss) < 0.8 * mean_rmse
    assert torch.equal(trainer.params.logits, logits)


def test_discovery_stage_leaves_predictor_untouched() -> None:
    panel = _panel()
    trainer = CutsPlusTrainer(panel, ObservationMask.full(4, 40), _train(), SMALL_MODEL)
    state = {name: value.clone() for name, value in trainer.predictor.state_dict().items()}
    logits = trainer.params.logits.detach().clone()

    trainer.discovery_stage_epoch()

    for name, value in trainer.predictor.state_dict().items():
        torch.testing.assert_close(value, state[name])
    assert not torch.equal(trainer.params.logits.detach(), logits)
    assert all(parameter.requires_grad for parameter in trainer.predictor.parameters())


def test_zero_learning_rates_freeze_everything() -> None:
    panel = _panel()
    cfg = _train(learning_rate_theta=0.0, learning_rate_phi=0.0, use_c2fd=False)
    trainer = CutsPlusTrainer(panel, ObservationMask.full(4, 40), cfg, SMALL_MODEL)
    before = trainer.cpg()

    result = trainer.fit()

    np.testing.assert_array_equal(result.cpg, before)


def test_group_schedule_reaches_singletons() -> None:
    panel = _panel()
    cfg = _train(epochs=41, split_period=20, initial_groups=1)

    result = fit(panel, ObservationMask.full(4, 40), cfg, SMALL_MODEL)

    assert [entry["epoch"] for entry in result.trace.group_history] == [0, 20, 40]
    assert [entry["sizes"] for entry in result.trace.group_history] == [
        [4],
        [2, 2],
        [1, 1, 1, 1],
    ]
    assert result.trace.epochs[19].n_groups == 1
    assert result.trace.epochs[20].n_groups == 2
    assert result.trace.epochs[40].n_groups == 4


def test_without_coarse_to_fine_every_series_has_its_own_group() -> None:
    cfg = _train(epochs=3, split_period=1, initial_groups=1, use_c2fd=False)

    result = fit(_panel(), ObservationMask.full(4, 40), cfg, SMALL_MODEL)

    assert result.trace.group_history == [{"epoch": 0, "sizes": [1, 1, 1, 1]}]
    assert all(record.n_groups == 4 for record in result.trace.epochs)


def test_fit_is_deterministic_for_a_seed() -> None:
    panel = _panel()
    observed = np.random.default_rng(1).random((4, 40)) > 0.2
    mask = ObservationMask(observed)
    hidden = TimeSeriesPanel(np.where(observed, panel.values, 0.0))

    first = fit(hidden, mask, _train(epochs=3), SMALL_MODEL)
    second = fit(hidden, mask, _train(epochs=3), SMALL_MODEL)
    other = fit(hidden, mask, _train(epochs=3, seed=6), SMALL_MODEL)

    np.testing.assert_array_equal(first.cpg, second.cpg)
    np.testing.assert_array_equal(first.imputed, second.imputed)
    assert not np.array_equal(first.cpg, other.cpg)


def test_fit_keeps_observed_entries_exact_and_fills_missing_ones() -> None:
    panel = _panel()
    observed = np.random.default_rng(2).random((4, 40)) > 0.3
    mask = ObservationMask(observed)
    hidden = TimeSeriesPanel(np.where(observed, panel.values, 0.0))

    result = fit(hidden, mask, _train(epochs=2), SMALL_MODEL)

    np.testing.assert_array_equal(result.imputed[observed], panel.values[observed])
    assert np.all(np.isfinite(result.imputed))


def test_prediction_loss_trends_down_over_twenty_epochs() -> None:
    panel, _ = gen_var(VarConfig(n_series=4, length=300, seed=2))
    cfg = _train(epochs=20, batch=32, learning_rate_phi=1e-2, use_c2fd=False)

    result = fit(panel, ObservationMask.full(4, 300), cfg, ModelConfig(hidden_dim=8))

    losses = np.array([record.prediction_loss for record in result.trace.epochs])
    assert losses.size == 20
    assert losses[-5:].mean() <= losses[:5].mean()


def test_strong_sparsity_drives_probabilities_down() -> None:
    cfg = _train(epochs=10, lambda_sparsity=1e3, learning_rate_theta=0.1, use_c2fd=False)
    trainer = CutsPlusTrainer(_panel(), ObservationMask.full(4, 40), cfg, SMALL_MODEL)
    before = trainer.cpg()

    result = trainer.fit()

    assert result.cpg.max() < before.min()
    assert result.cpg.max() < 0.4


def test_driving_series_is_ranked_above_the_reverse_edge() -> None:
    rng = np.random.default_rng(0)
    driver = rng.normal(size=300)
    follower = np.zeros(300)
    follower[1:] = 0.9 * driver[:-1] + 0.1 * rng.normal(size=299)
    panel = TimeSeriesPanel(np.stack([driver, follower]))
    cfg = _train(
        epochs=40,
        batch=32,
        learning_rate_theta=0.05,
        learning_rate_phi=1e-2,
        use_c2fd=False,
        gumbel=GumbelSchedule(start=1.0, end=0.5),
    )

    result = fit(panel, ObservationMask.full(2, 300), cfg, ModelConfig(hidden_dim=16))

    assert result.cpg[0, 1] > result.cpg[1, 0]


def test_per_epoch_auroc_is_recorded_with_truth() -> None:
    truth = GroundTruthGraph(np.eye(4, dtype=np.int8))

    result = fit(_panel(), ObservationMask.full(4, 40), _train(), SMALL_MODEL, truth=truth)

    assert all(record.auroc is not None for record in result.trace.epochs)


def test_degenerate_truth_disables_per_epoch_auroc(caplog: pytest.LogCaptureFixture) -> None:
    truth = GroundTruthGraph(np.zeros((4, 4), dtype=np.int8))

    with caplog.at_level(logging.WARNING, logger="cutscope.trainer"):
        result = fit(_panel(), ObservationMask.full(4, 40), _train(), SMALL_MODEL, truth=truth)

    assert all(record.auroc is None for record in result.trace.epochs)
    assert any("degenerate" in record.getMessage() for record in caplog.records)


def test_fit_writes_periodic_checkpoints(tmp_path: Path) -> None:
    cfg = _train(epochs=2, checkpoint_every=1)

    fit(_panel(), ObservationMask.full(4, 40), cfg, SMALL_MODEL, checkpoint_dir=tmp_path)

    checkpoint = load_checkpoint(tmp_path / "epoch-2.pt")
    assert (tmp_path / "epoch-1.pt").exists()
    assert checkpoint.epoch == 1
    assert checkpoint.hidden_dim == 4
    assert checkpoint.imputation.shape == (4, 40)


def test_non_finite_loss_writes_diagnostic_checkpoint(tmp_path: Path) -> None:
    trainer = CutsPlusTrainer(
        _panel(), ObservationMask.full(4, 40), _train(), SMALL_MODEL, checkpoint_dir=tmp_path
    )
    with torch.no_grad():
        trainer.predictor.decoder.head_bias[0] = float("nan")

    with pytest.raises(NonFiniteLossError, match="prediction"):
        trainer.prediction_stage_epoch()

    assert (tmp_path / "diagnostic-epoch-0.pt").exists()


def test_non_finite_gradient_also_writes_diagnostic_checkpoint(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    def failing(named_parameters: object) -> None:
        raise NonFiniteGradientError("non-finite gradient in graph.logits")

    monkeypatch.setattr("cutscope.trainer.collect_gradients", failing)
    trainer = CutsPlusTrainer(
        _panel(), ObservationMask.full(4, 40), _train(), SMALL_MODEL, checkpoint_dir=tmp_path
    )

    with pytest.raises(NonFiniteGradientError):
        trainer.discovery_stage_epoch()

    assert load_checkpoint(tmp_path / "diagnostic-epoch-0.pt").epoch == 0


def test_trace_serialises_to_plain_dict() -> None:
    result = fit(_panel(), ObservationMask.full(4, 40), _train(epochs=1), SMALL_MODEL)

    payload = result.trace.to_dict()

    assert payload["epochs"][0]["epoch"] == 0
    assert payload["epochs"][0]["n_groups"] == 1
    assert payload["group_history"][0]["sizes"] == [4]
