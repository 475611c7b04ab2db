"""Message-passing GRU encoder and shared/per-series decoder.

Tensor layout throughout: ``inputs`` is ``(batch, W, N)`` (time before series) and a
graph batch is ``(batch or 1, N, N)`` with ``graph[b, i, j]`` the edge ``i -> j``. The
prediction for target ``j`` only ever sees the inputs multiplied by column ``j``.
"""

from __future__ import annotations

import statistics
import time
from collections.abc import Iterable

import torch
from torch import nn

from cutscope.models import ModelConfig
from cutscope.ports import NumericalFailure


class NonFiniteGradientError(NumericalFailure):
    pass


class MessagePassing(nn.Module):
    """MLP applied to the masked input ``z * s``."""

    def __init__(self, in_dim: int, hidden_dim: int) -> None:
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim),
        )

    def forward(self, z: torch.Tensor, s: torch.Tensor | None = None) -> torch.Tensor:
        return self.mlp(z if s is None else z * s)


class MPGRUCell(nn.Module):
    def __init__(self, in_dim: int, hidden_dim: int, use_reset_gate: bool = False) -> None:
        super().__init__()
        self.use_reset_gate = use_reset_gate
        self.reset = MessagePassing(in_dim, hidden_dim)
        self.update = MessagePassing(in_dim, hidden_dim)
        self.candidate = MessagePassing(in_dim, hidden_dim)
        # only used when the reset gate is on
        self.recurrent = nn.Linear(hidden_dim, hidden_dim, bias=False)

    def forward(
        self, z: torch.Tensor, s: torch.Tensor | None, h_prev: torch.Tensor
    ) -> torch.Tensor:
        u = torch.sigmoid(self.update(z, s))
        if self.use_reset_gate:
            r = torch.sigmoid(self.reset(z, s))
            c = torch.tanh(self.candidate(z, s) + r * self.recurrent(h_prev))
        else:
            c = torch.tanh(self.candidate(z, s))
        return u * h_prev + (1.0 - u) * c


class MPGNNEncoder(nn.Module):
    def __init__(
        self, n_series: int, hidden_dim: int, n_layers: int, use_reset_gate: bool = False
    ) -> None:
        super().__init__()
        self.hidden_dim = hidden_dim
        self.layers = nn.ModuleList(
            MPGRUCell(n_series if index == 0 else hidden_dim, hidden_dim, use_reset_gate)
            for index in range(n_layers)
        )

    def forward(self, inputs: torch.Tensor, columns: torch.Tensor) -> torch.Tensor:
        """Return the top-layer hidden state per target, shape ``(batch, J, hidden)``.

        ``columns[b, j]`` is the causal column of the ``j``-th requested target. Only the
        first layer sees raw series, so only the first layer is masked.
        """
        batch, width, _ = inputs.shape
        n_targets = columns.shape[1]
        hidden = [
            inputs.new_zeros((batch, n_targets, self.hidden_dim)) for _ in self.layers
        ]
        for t in range(width):
            z = inputs[:, t, None, :]
            for index, cell in enumerate(self.layers):
                mask = columns if index == 0 else None
                hidden[index] = cell(z, mask, hidden[index])
                z = hidden[index]
        return hidden[-1]


class SeriesDecoder(nn.Module):
    def __init__(self, n_series: int, hidden_dim: int) -> None:
        super().__init__()
        self.shared = nn.Sequential(
            nn.Linear(hidden_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim),
        )
        bound = 1.0 / hidden_dim**0.5
        self.head_weight = nn.Parameter(torch.empty(n_series, hidden_dim).uniform_(-bound, bound))
        self.head_bias = nn.Parameter(torch.empty(n_series).uniform_(-bound, bound))

    def forward(self, hidden: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        n_series = self.head_weight.shape[0]
        if targets.numel() and (int(targets.min()) < 0 or int(targets.max()) >= n_series):
            raise IndexError(f"target index out of range for {n_series} series")
        shared = self.shared(hidden)
        return (shared * self.head_weight[targets]).sum(dim=-1) + self.head_bias[targets]


class MPGNNPredictor(nn.Module):
    """One-step-ahead predictor whose ``j``-th output depends only on graph column ``j``."""

    def __init__(
        self,
        n_series: int,
        hidden_dim: int = 32,
        n_layers: int = 1,
        use_reset_gate: bool = False,
    ) -> None:
        super().__init__()
        if n_series < 1 or hidden_dim < 1 or n_layers < 1:
            raise ValueError("n_series, hidden_dim and n_layers must be positive")
        self.n_series = n_series
        self.encoder = MPGNNEncoder(n_series, hidden_dim, n_layers, use_reset_gate)
        self.decoder = SeriesDecoder(n_series, hidden_dim)
        self.to(torch.float64)

    @classmethod
    def from_config(cls, n_series: int, cfg: ModelConfig) -> MPGNNPredictor:
        return cls(n_series, cfg.hidden_dim, cfg.n_layers, cfg.use_reset_gate)

    def forward(
        self,
        inputs: torch.Tensor,
        graph: torch.Tensor,
        targets: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if inputs.ndim == 2:
            inputs = inputs.unsqueeze(0)
        if graph.ndim == 2:
            graph = graph.unsqueeze(0)
        if inputs.shape[-1] != self.n_series or graph.shape[-2:] != (self.n_series, self.n_series):
            raise ValueError(
                f"expected {self.n_series} series, got inputs {tuple(inputs.shape)} "
                f"and graph {tuple(graph.shape)}"
            )
        if targets is None:
            targets = torch.arange(self.n_series)
        columns = graph.transpose(-1, -2)[:, targets, :]
        hidden = self.encoder(inputs, columns)
        return self.decoder(hidden, targets)

    def encoder_block_count(self) -> int:
        """Encoder weight blocks other than the N-wide input projections of the first layer."""
        return sum(
            1 for name, _ in self.encoder.named_parameters() if not _is_input_projection(name)
        )

    def parameter_count(self) -> int:
        return sum(parameter.numel() for parameter in self.parameters())


def _is_input_projection(name: str) -> bool:
    return name.startswith("layers.0.") and name.endswith(".mlp.0.weight")


def collect_gradients(
    named_parameters: Iterable[tuple[str, torch.Tensor]],
) -> dict[str, torch.Tensor]:
    """Gradient per named block; blocks the loss never reached get zeros."""
    gradients: dict[str, torch.Tensor] = {}
    for name, parameter in named_parameters:
        grad = parameter.grad
        if grad is None:
            gradients[name] = torch.zeros_like(parameter)
            continue
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradientError(f"non-finite gradient in parameter block {name!r}")
        gradients[name] = grad
    return gradients


def measure_step_time(
    n_series: int,
    hidden_dim: int = 32,
    batch: int = 64,
    history: int = 3,
    repeats: int = 5,
    seed: int = 0,
) -> float:
    """Median wall time in seconds of one forward and backward pass."""
    generator = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MPGNNPredictor(n_series, hidden_dim)
    inputs = torch.randn((batch, history, n_series), generator=generator, dtype=torch.float64)
    graph = torch.bernoulli(
        torch.full((batch, n_series, n_series), 0.5, dtype=torch.float64), generator=generator
    )

    def step() -> None:
        model.zero_grad(set_to_none=True)
        model(inputs, graph).pow(2).mean().backward()

    step()
    timings: list[float] = []
    for _ in range(max(1, repeats)):
        started = time.perf_counter()
        step()
        timings.append(time.perf_counter() - started)
    return statistics.median(timings)
