from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path

SIMULATOR_SEED_OFFSET = 0
MISSING_SEED_OFFSET = 1
TRAIN_SEED_OFFSET = 2


@dataclass(frozen=True)
class LoggingConfig:
    level: str = "INFO"
    json: bool = True


@dataclass(frozen=True)
class VarConfig:
    n_series: int = 16
    length: int = 1000
    tau_max: int = 3
    density: float = 0.2
    coeff_scale: float = 0.5
    noise_sigma: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class Lorenz96Config:
    n_series: int = 16
    length: int = 1000
    forcing: float = 10.0
    dt: float = 0.01
    subsample: int = 10
    noise_sigma: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class CsvSource:
    panel: Path
    mask: Path | None = None
    truth: Path | None = None
    delimiter: str = ","
    missing_token: str = "NaN"


DataSource = VarConfig | Lorenz96Config | CsvSource


class MissingKind(StrEnum):
    NONE = "none"
    RM = "rm"
    RBM = "rbm"


@dataclass(frozen=True)
class MissingConfig:
    kind: MissingKind = MissingKind.NONE
    p: float = 0.0
    p_blk: float = 0.0
    l_min: int = 5
    l_max: int = 20
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 32
    n_layers: int = 1
    use_reset_gate: bool = False


@dataclass(frozen=True)
class GumbelSchedule:
    start: float = 1.0
    end: float = 0.1
    # None follows the total epoch count
    decay_epochs: int | None = None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    split_period: int = 20
    initial_groups: int | None = None
    use_c2fd: bool = True
    lambda_sparsity: float = 5e-4
    learning_rate_theta: float = 1e-2
    learning_rate_phi: float = 1e-3
    batch: int = 64
    window_width: int | None = None
    tau_max: int = 3
    gumbel: GumbelSchedule = field(default_factory=GumbelSchedule)
    imputation_momentum: float = 0.9
    checkpoint_every: int = 0
    log_every: int = 10
    seed: int = 0

    @property
    def history(self) -> int:
        """Number of past steps fed to the encoder for one prediction."""
        if self.window_width is None:
            return self.tau_max
        return self.window_width - 1

    @property
    def decay_epochs(self) -> int:
        if self.gumbel.decay_epochs is None:
            return max(1, self.epochs)
        return self.gumbel.decay_epochs

    def groups_for(self, n_series: int) -> int:
        if not self.use_c2fd:
            return n_series
        if self.initial_groups is None:
            return max(1, n_series // 8)
        return self.initial_groups


@dataclass(frozen=True)
class EvalConfig:
    exclude_diagonal: bool = False
    heatmap: bool = True


@dataclass(frozen=True)
class RunConfig:
    data: DataSource
    missing: MissingConfig = field(default_factory=MissingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    seeds: tuple[int, ...] = ()
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @property
    def run_seeds(self) -> tuple[int, ...]:
        return self.seeds if self.seeds else (self.seed,)

    def for_seed(self, seed: int) -> RunConfig:
        data: DataSource = self.data
        if isinstance(data, VarConfig | Lorenz96Config):
            data = replace(data, seed=seed + SIMULATOR_SEED_OFFSET)
        return replace(
            self,
            data=data,
            missing=replace(self.missing, seed=seed + MISSING_SEED_OFFSET),
            train=replace(self.train, seed=seed + TRAIN_SEED_OFFSET),
            seed=seed,
            seeds=(),
        )
