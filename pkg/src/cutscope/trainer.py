"""Alternating prediction / discovery training with coarse-to-fine grouping.

Every epoch runs, in order: an optional group split, one prediction-stage pass
(Bernoulli graphs, predictor weights trained), sliding-window imputation of the
missing entries, and one discovery-stage pass (Gumbel-softmax graphs, graph
logits trained). Losses are computed on standardized values; the imputation is
kept in raw units so observed entries stay exact.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import torch

from cutscope.checkpoint import Checkpoint, save_checkpoint
from cutscope.data import (
    GroundTruthGraph,
    ObservationMask,
    Standardizer,
    TimeSeriesPanel,
    WindowError,
    ensure_aligned,
    zoh_fill,
)
from cutscope.evaluation import DegenerateTruthError, auroc
from cutscope.graph import (
    GraphParameters,
    GroupAssignment,
    anneal_temperature,
    bernoulli_sample,
    expand_cpg,
    gumbel_soft_sample,
    init_graph_parameters,
    init_groups,
    split_groups,
)
from cutscope.models import ModelConfig, TrainConfig
from cutscope.ports import NumericalFailure, OneStepPredictor
from cutscope.predictor import MPGNNPredictor, NonFiniteGradientError, collect_gradients

THETA_BLOCK = "graph.logits"


class AllMaskedBatchError(ValueError):
    pass


class NonFiniteLossError(NumericalFailure):
    pass


def masked_mse(
    predictions: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    observed = mask.sum()
    if float(observed) == 0.0:
        raise AllMaskedBatchError("every target entry in the batch is missing")
    return (((predictions - targets) ** 2) * mask).sum() / observed


def loss_data(
    predictions: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    return masked_mse(predictions, targets, mask)


def loss_graph(
    predictions: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
    params: GraphParameters,
) -> torch.Tensor:
    """Masked MSE plus ``lambda * sum(sigmoid(logits))``."""
    penalty = params.probabilities().sum()
    return masked_mse(predictions, targets, mask) + params.lambda_sparsity * penalty


@dataclass
class ImputationState:
    filled: npt.NDArray[np.float64]
    epoch_of_last_update: int = -1

    @classmethod
    def seed(cls, panel: TimeSeriesPanel, mask: ObservationMask) -> ImputationState:
        return cls(filled=zoh_fill(panel, mask))


def impute_sliding(
    state: ImputationState,
    predictor: OneStepPredictor,
    panel: TimeSeriesPanel,
    mask: ObservationMask,
    history: int,
    momentum: float = 0.9,
    epoch: int | None = None,
) -> ImputationState:
    """Left-to-right pass blending each missing entry toward its one-step prediction.

    The prediction for step ``t`` reads the already updated columns ``t - history``
    to ``t - 1``. Columns earlier than ``history`` have no full window and keep
    their current values.
    """
    ensure_aligned(panel, mask)
    filled = np.array(state.filled, dtype=np.float64, copy=True)
    missing = ~mask.observed
    for t in range(history, panel.length):
        rows = missing[:, t]
        if not rows.any():
            continue
        prediction = predictor(filled[:, t - history : t])
        filled[rows, t] = momentum * filled[rows, t] + (1.0 - momentum) * prediction[rows]
    return ImputationState(
        filled=filled,
        epoch_of_last_update=state.epoch_of_last_update if epoch is None else epoch,
    )


def imputation_rmse(
    filled: npt.NDArray[np.float64],
    reference: npt.NDArray[np.float64],
    mask: ObservationMask,
) -> float:
    """RMSE over missing entries only; 0.0 when nothing is missing."""
    missing = ~mask.observed
    if not missing.any():
        return 0.0
    errors = (np.asarray(filled) - np.asarray(reference))[missing]
    return float(np.sqrt(np.mean(errors**2)))


@dataclass(frozen=True)
class StageResult:
    loss: float
    skipped_batches: int


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    n_groups: int
    temperature: float
    prediction_loss: float
    discovery_loss: float
    mean_edge_probability: float
    skipped_batches: int
    auroc: float | None = None


@dataclass
class TrainingTrace:
    epochs: list[EpochRecord] = field(default_factory=list)
    group_history: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": [asdict(record) for record in self.epochs],
            "group_history": list(self.group_history),
        }


@dataclass(frozen=True)
class FitResult:
    cpg: npt.NDArray[np.float64]
    trace: TrainingTrace
    imputed: npt.NDArray[np.float64]


class ModelImputer:
    """Raw-unit one-step predictor backed by the trainer's model and a fresh Bernoulli graph."""

    def __init__(
        self,
        predictor: MPGNNPredictor,
        params: GraphParameters,
        assignment: GroupAssignment,
        standardizer: Standardizer,
        generator: torch.Generator,
    ) -> None:
        self._predictor = predictor
        self._params = params
        self._assignment = assignment
        self._standardizer = standardizer
        self._generator = generator

    def __call__(self, history: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        scaled = self._standardizer.transform(history)
        inputs = torch.from_numpy(np.ascontiguousarray(scaled.T)).unsqueeze(0)
        graph = bernoulli_sample(self._params, self._assignment, self._generator)
        with torch.no_grad():
            prediction = self._predictor(inputs, graph)[0].numpy()
        return self._standardizer.inverse(prediction)


class CutsPlusTrainer:
    def __init__(
        self,
        panel: TimeSeriesPanel,
        mask: ObservationMask,
        train_cfg: TrainConfig,
        model_cfg: ModelConfig,
        truth: GroundTruthGraph | None = None,
        checkpoint_dir: Path | None = None,
    ) -> None:
        ensure_aligned(panel, mask)
        history = train_cfg.history
        if history < 1:
            raise WindowError("window width must be at least 2")
        if panel.length <= history:
            raise WindowError(f"panel length {panel.length} must exceed history {history}")
        if not mask.observed[:, history:].any():
            raise WindowError(f"no observed entry after the first {history} steps")

        self._logger = logging.getLogger(__name__)
        self._panel = panel
        self._mask = mask
        self._cfg = train_cfg
        self._model_cfg = model_cfg
        self._history = history
        self._checkpoint_dir = checkpoint_dir
        self._truth = self._usable_truth(truth)
        self._epoch = 0

        self._standardizer = Standardizer.fit(panel, mask)
        observed = mask.as_float()
        self._observed = torch.from_numpy(np.ascontiguousarray(observed.T))
        scaled = self._standardizer.transform(panel.values) * observed
        self._targets = torch.from_numpy(np.ascontiguousarray(scaled.T))
        self._starts = np.arange(panel.length - history)
        self._offsets = np.arange(history)
        self.imputation = ImputationState.seed(panel, mask)

        self._rng = np.random.default_rng(train_cfg.seed)
        self._generator = torch.Generator().manual_seed(train_cfg.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(train_cfg.seed)
            self.predictor = MPGNNPredictor.from_config(panel.n_series, model_cfg)

        self.assignment = init_groups(panel.n_series, train_cfg.groups_for(panel.n_series))
        self.params = init_graph_parameters(
            self.assignment,
            train_cfg.lambda_sparsity,
            anneal_temperature(0, train_cfg.gumbel, train_cfg.decay_epochs),
            self._generator,
        )
        self._phi_optimizer = torch.optim.Adam(
            self.predictor.parameters(), lr=train_cfg.learning_rate_phi
        )
        self._theta_optimizer = self._new_theta_optimizer()
        self.group_history: list[dict[str, Any]] = [
            {"epoch": 0, "sizes": self.assignment.sizes}
        ]

    def _usable_truth(self, truth: GroundTruthGraph | None) -> GroundTruthGraph | None:
        if truth is None:
            return None
        try:
            auroc(np.zeros(truth.adjacency.shape), truth)
        except DegenerateTruthError:
            self._logger.warning("ground truth is degenerate; per-epoch AUROC disabled")
            return None
        return truth

    def _new_theta_optimizer(self) -> torch.optim.Adam:
        return torch.optim.Adam([self.params.logits], lr=self._cfg.learning_rate_theta)

    def cpg(self) -> npt.NDArray[np.float64]:
        with torch.no_grad():
            return expand_cpg(self.assignment, self.params).numpy().copy()

    def split(self) -> bool:
        assignment, params, did_split = split_groups(self.assignment, self.params)
        if not did_split:
            return False
        self.assignment = assignment
        self.params = params
        self._theta_optimizer = self._new_theta_optimizer()
        self.group_history.append({"epoch": self._epoch, "sizes": assignment.sizes})
        self._logger.info(
            "groups split",
            extra={"epoch": self._epoch, "n_groups": assignment.n_groups},
        )
        return True

    def _scaled_inputs(self) -> torch.Tensor:
        scaled = self._standardizer.transform(self.imputation.filled)
        return torch.from_numpy(np.ascontiguousarray(scaled.T))

    def _batches(self) -> list[npt.NDArray[np.int64]]:
        order = self._rng.permutation(self._starts)
        return [order[i : i + self._cfg.batch] for i in range(0, order.size, self._cfg.batch)]

    def _batch(
        self, inputs: torch.Tensor, starts: npt.NDArray[np.int64]
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        window_index = torch.from_numpy(starts[:, None] + self._offsets[None, :])
        target_index = torch.from_numpy(starts + self._history)
        return inputs[window_index], self._targets[target_index], self._observed[target_index]

    def _write_diagnostic(self) -> None:
        if self._checkpoint_dir is None:
            return
        path = save_checkpoint(
            self.snapshot(), self._checkpoint_dir / f"diagnostic-epoch-{self._epoch}.pt"
        )
        self._logger.error("diagnostic checkpoint written", extra={"path": str(path)})

    def _check_finite(self, loss: torch.Tensor, stage: str) -> None:
        if bool(torch.isfinite(loss)):
            return
        self._write_diagnostic()
        raise NonFiniteLossError(f"non-finite {stage} loss at epoch {self._epoch}")

    def _collect(self, parameters: Iterable[tuple[str, torch.Tensor]]) -> None:
        try:
            collect_gradients(parameters)
        except NonFiniteGradientError:
            self._write_diagnostic()
            raise

    def prediction_stage_epoch(self, graph_override: torch.Tensor | None = None) -> StageResult:
        """One pass over shuffled windows training the predictor; graph logits stay fixed.

        ``graph_override`` replaces the sampled graphs with a fixed ``N x N`` graph.
        """
        self.predictor.train()
        inputs = self._scaled_inputs()
        losses: list[float] = []
        skipped = 0
        for starts in self._batches():
            x, y, o = self._batch(inputs, starts)
            if graph_override is None:
                graph = bernoulli_sample(
                    self.params, self.assignment, self._generator, n_samples=starts.size
                )
            else:
                graph = graph_override
            try:
                loss = loss_data(self.predictor(x, graph), y, o)
            except AllMaskedBatchError:
                skipped += 1
                continue
            self._check_finite(loss, "prediction")
            self._phi_optimizer.zero_grad(set_to_none=True)
            loss.backward()
            self._collect(self.predictor.named_parameters())
            self._phi_optimizer.step()
            losses.append(loss.item())
        return StageResult(loss=_mean(losses), skipped_batches=skipped)

    def discovery_stage_epoch(self) -> StageResult:
        """One pass training the graph logits through Gumbel-softmax graphs; predictor frozen."""
        self.predictor.eval()
        inputs = self._scaled_inputs()
        losses: list[float] = []
        skipped = 0
        self.predictor.requires_grad_(False)
        try:
            for starts in self._batches():
                x, y, o = self._batch(inputs, starts)
                graph = gumbel_soft_sample(
                    self.params, self.assignment, self._generator, n_samples=starts.size
                )
                try:
                    loss = loss_graph(self.predictor(x, graph), y, o, self.params)
                except AllMaskedBatchError:
                    skipped += 1
                    continue
                self._check_finite(loss, "discovery")
                self._theta_optimizer.zero_grad(set_to_none=True)
                loss.backward()
                self._collect([(THETA_BLOCK, self.params.logits)])
                self._theta_optimizer.step()
                losses.append(loss.item())
        finally:
            self.predictor.requires_grad_(True)
        return StageResult(loss=_mean(losses), skipped_batches=skipped)

    def impute(self) -> None:
        imputer = ModelImputer(
            self.predictor, self.params, self.assignment, self._standardizer, self._generator
        )
        self.imputation = impute_sliding(
            self.imputation,
            imputer,
            self._panel,
            self._mask,
            self._history,
            self._cfg.imputation_momentum,
            epoch=self._epoch,
        )

    def _should_split(self, epoch: int) -> bool:
        return (
            self._cfg.use_c2fd
            and epoch > 0
            and epoch % self._cfg.split_period == 0
            and not self.assignment.all_singleton
        )

    def snapshot(self) -> Checkpoint:
        return Checkpoint(
            epoch=self._epoch,
            predictor_state=self.predictor.state_dict(),
            logits=self.params.logits,
            membership=self.assignment.membership,
            temperature=self.params.temperature,
            imputation=self.imputation.filled,
            hidden_dim=self._model_cfg.hidden_dim,
            n_layers=self._model_cfg.n_layers,
            use_reset_gate=self._model_cfg.use_reset_gate,
        )

    def fit(self) -> FitResult:
        trace = TrainingTrace()
        last = self._cfg.epochs - 1
        for epoch in range(self._cfg.epochs):
            self._epoch = epoch
            if self._should_split(epoch):
                self.split()
            self.params.temperature = anneal_temperature(
                epoch, self._cfg.gumbel, self._cfg.decay_epochs
            )
            prediction = self.prediction_stage_epoch()
            self.impute()
            discovery = self.discovery_stage_epoch()

            cpg = self.cpg()
            record = EpochRecord(
                epoch=epoch,
                n_groups=self.assignment.n_groups,
                temperature=self.params.temperature,
                prediction_loss=prediction.loss,
                discovery_loss=discovery.loss,
                mean_edge_probability=float(cpg.mean()),
                skipped_batches=prediction.skipped_batches + discovery.skipped_batches,
                auroc=None if self._truth is None else auroc(cpg, self._truth).auroc,
            )
            trace.epochs.append(record)
            if epoch % max(self._cfg.log_every, 1) == 0 or epoch == last:
                self._logger.info(
                    "epoch finished",
                    extra={
                        "stage": "discover",
                        "epoch": epoch,
                        "n_groups": record.n_groups,
                        "loss": record.discovery_loss,
                        "temperature": record.temperature,
                        "auroc": record.auroc,
                    },
                )
            every = self._cfg.checkpoint_every
            if self._checkpoint_dir is not None and every > 0 and (epoch + 1) % every == 0:
                save_checkpoint(self.snapshot(), self._checkpoint_dir / f"epoch-{epoch + 1}.pt")

        trace.group_history = list(self.group_history)
        return FitResult(cpg=self.cpg(), trace=trace, imputed=self.imputation.filled.copy())


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def fit(
    panel: TimeSeriesPanel,
    mask: ObservationMask,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    truth: GroundTruthGraph | None = None,
    checkpoint_dir: Path | None = None,
) -> FitResult:
    trainer = CutsPlusTrainer(panel, mask, train_cfg, model_cfg, truth, checkpoint_dir)
    return trainer.fit()
