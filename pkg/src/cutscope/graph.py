"""Causal-graph state: series groups, group-level logits and graph sampling.

The group assignment ``G`` is an ``N_g x N`` 0/1 matrix with exactly one 1 per column.
Graph parameters hold the ``N_g x N`` logits ``Theta``; ``Q = sigmoid(Theta)`` is the
group causal probability graph and ``M = G^T Q`` the full one, so row ``i`` of ``M`` is
the row of ``Q`` that belongs to series ``i``'s group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import torch

from cutscope.models import GumbelSchedule

PROBABILITY_EPS = 1e-6
LOGIT_JITTER = 0.1


class GraphStateError(ValueError):
    pass


@dataclass(frozen=True)
class GroupAssignment:
    membership: npt.NDArray[np.int8]

    def __post_init__(self) -> None:
        raw = np.asarray(self.membership)
        if raw.ndim != 2 or raw.shape[0] == 0 or raw.shape[1] == 0:
            raise GraphStateError(f"membership must be a non-empty N_g x N matrix, got {raw.shape}")
        if not np.isin(raw, (0, 1)).all():
            raise GraphStateError("membership entries must be 0 or 1")
        column_sums = raw.sum(axis=0)
        if not np.all(column_sums == 1):
            bad = int(np.flatnonzero(column_sums != 1)[0])
            raise GraphStateError(f"series {bad} belongs to {int(column_sums[bad])} groups")
        if np.any(raw.sum(axis=1) == 0):
            raise GraphStateError("every group needs at least one member")
        membership = raw.astype(np.int8, copy=True)
        membership.setflags(write=False)
        object.__setattr__(self, "membership", membership)

    @property
    def n_groups(self) -> int:
        return int(self.membership.shape[0])

    @property
    def n_series(self) -> int:
        return int(self.membership.shape[1])

    @property
    def group_of(self) -> npt.NDArray[np.int64]:
        return np.argmax(self.membership, axis=0).astype(np.int64)

    @property
    def sizes(self) -> list[int]:
        return [int(size) for size in self.membership.sum(axis=1)]

    def members(self, group: int) -> npt.NDArray[np.int64]:
        return np.flatnonzero(self.membership[group]).astype(np.int64)

    @property
    def all_singleton(self) -> bool:
        return self.n_groups == self.n_series

    def row_index(self) -> torch.Tensor:
        return torch.as_tensor(self.group_of, dtype=torch.long)


@dataclass
class GraphParameters:
    """Trainable group logits plus the current Gumbel temperature and sparsity weight."""

    logits: torch.Tensor
    temperature: float
    lambda_sparsity: float

    def probabilities(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


def init_groups(n_series: int, n_groups: int) -> GroupAssignment:
    """Contiguous allocation; the last group absorbs the remainder of ``N // N_g``."""
    if n_groups < 1 or n_groups > n_series:
        raise GraphStateError(f"n_groups must be in [1, {n_series}], got {n_groups}")
    size = n_series // n_groups
    membership = np.zeros((n_groups, n_series), dtype=np.int8)
    for group in range(n_groups):
        stop = n_series if group == n_groups - 1 else (group + 1) * size
        membership[group, group * size : stop] = 1
    return GroupAssignment(membership)


def init_graph_parameters(
    assignment: GroupAssignment,
    lambda_sparsity: float,
    temperature: float,
    generator: torch.Generator,
) -> GraphParameters:
    jitter = torch.randn(
        (assignment.n_groups, assignment.n_series), generator=generator, dtype=torch.float64
    )
    logits = (LOGIT_JITTER * jitter).requires_grad_(True)
    return GraphParameters(logits=logits, temperature=temperature, lambda_sparsity=lambda_sparsity)


def split_probability(q: torch.Tensor) -> torch.Tensor:
    """Child probability whose two independent draws jointly match parent ``q``."""
    return 1.0 - torch.sqrt(1.0 - q)


def split_groups(
    assignment: GroupAssignment, params: GraphParameters
) -> tuple[GroupAssignment, GraphParameters, bool]:
    """Halve every group with two or more members.

    The third element is ``False`` when all groups were already singletons; the
    inputs are then returned unchanged.
    """
    if assignment.all_singleton:
        return assignment, params, False

    with torch.no_grad():
        parent_q = params.probabilities()
        child_q = split_probability(parent_q)
        rows: list[npt.NDArray[np.int8]] = []
        q_rows: list[torch.Tensor] = []
        for group in range(assignment.n_groups):
            members = assignment.members(group)
            if members.size == 1:
                rows.append(assignment.membership[group].copy())
                q_rows.append(parent_q[group])
                continue
            half = math.ceil(members.size / 2)
            for part in (members[:half], members[half:]):
                row = np.zeros(assignment.n_series, dtype=np.int8)
                row[part] = 1
                rows.append(row)
                q_rows.append(child_q[group])
        new_q = torch.stack(q_rows).clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)
        new_logits = torch.logit(new_q)

    split = GroupAssignment(np.stack(rows))
    new_params = GraphParameters(
        logits=new_logits.detach().clone().requires_grad_(True),
        temperature=params.temperature,
        lambda_sparsity=params.lambda_sparsity,
    )
    return split, new_params, True


def expand_cpg(assignment: GroupAssignment, params: GraphParameters) -> torch.Tensor:
    if params.logits.shape != (assignment.n_groups, assignment.n_series):
        raise GraphStateError(
            f"logits shape {tuple(params.logits.shape)} does not match "
            f"{assignment.n_groups} groups x {assignment.n_series} series"
        )
    return params.probabilities()[assignment.row_index()]


def _gumbel_noise(shape: tuple[int, ...], generator: torch.Generator) -> torch.Tensor:
    uniform = torch.rand(shape, generator=generator, dtype=torch.float64)
    uniform = uniform.clamp_min(torch.finfo(torch.float64).tiny)
    return -torch.log(-torch.log(uniform))


def gumbel_soft_from_noise(
    q: torch.Tensor, g1: torch.Tensor, g2: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Binary Gumbel-softmax relaxation of Bernoulli(q) at fixed noise."""
    if temperature <= 0:
        raise GraphStateError("temperature must be positive")
    q = q.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)
    on = torch.log(q) + g1
    off = torch.log1p(-q) + g2
    return torch.sigmoid((on - off) / temperature)


def gumbel_soft_sample(
    params: GraphParameters,
    assignment: GroupAssignment,
    generator: torch.Generator,
    n_samples: int | None = None,
) -> torch.Tensor:
    """Soft graph (or a stack of ``n_samples`` graphs) differentiable in the logits.

    Noise is drawn per (group, target) pair so every member of a group sees the same draw.
    """
    q = params.probabilities()
    shape = tuple(q.shape) if n_samples is None else (n_samples, *q.shape)
    g1 = _gumbel_noise(shape, generator)
    g2 = _gumbel_noise(shape, generator)
    soft = gumbel_soft_from_noise(q, g1, g2, params.temperature)
    return soft[..., assignment.row_index(), :]


def bernoulli_sample(
    params: GraphParameters,
    assignment: GroupAssignment,
    generator: torch.Generator,
    n_samples: int | None = None,
) -> torch.Tensor:
    with torch.no_grad():
        q = params.probabilities()
        if n_samples is not None:
            q = q.expand(n_samples, *q.shape).contiguous()
        hard = torch.bernoulli(q, generator=generator)
    return hard[..., assignment.row_index(), :]


def anneal_temperature(epoch: int, schedule: GumbelSchedule, decay_epochs: int) -> float:
    if schedule.end <= 0 or schedule.start < schedule.end:
        raise GraphStateError("temperature schedule needs start >= end > 0")
    progress = min(epoch / max(decay_epochs, 1), 1.0)
    return float(schedule.start * (schedule.end / schedule.start) ** progress)
