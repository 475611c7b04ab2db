"""Training checkpoints: one ``torch.save`` file per snapshot.

The payload is a plain dict of tensors and scalars so it loads with
``torch.load(weights_only=True)``. See docs/checkpoints.md for the key list.
"""

from __future__ import annotations

import logging
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import torch

CHECKPOINT_FORMAT = "cuts-scope/checkpoint-v1"

logger = logging.getLogger(__name__)


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    predictor_state: dict[str, torch.Tensor]
    logits: torch.Tensor
    membership: npt.NDArray[np.int8]
    temperature: float
    imputation: npt.NDArray[np.float64]
    hidden_dim: int
    n_layers: int
    use_reset_gate: bool


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "epoch": checkpoint.epoch,
        "predictor": {
            name: value.detach().clone() for name, value in checkpoint.predictor_state.items()
        },
        "logits": checkpoint.logits.detach().clone(),
        "membership": torch.from_numpy(np.array(checkpoint.membership, dtype=np.int8)),
        "temperature": float(checkpoint.temperature),
        "imputation": torch.from_numpy(np.array(checkpoint.imputation, dtype=np.float64)),
        "model": {
            "hidden_dim": checkpoint.hidden_dim,
            "n_layers": checkpoint.n_layers,
            "use_reset_gate": checkpoint.use_reset_gate,
        },
    }
    torch.save(payload, path)
    logger.info("checkpoint written", extra={"path": str(path), "epoch": checkpoint.epoch})
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        payload = torch.load(path, weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    try:
        model = payload["model"]
        return Checkpoint(
            epoch=int(payload["epoch"]),
            predictor_state=dict(payload["predictor"]),
            logits=payload["logits"],
            membership=payload["membership"].numpy().astype(np.int8),
            temperature=float(payload["temperature"]),
            imputation=payload["imputation"].numpy().astype(np.float64),
            hidden_dim=int(model["hidden_dim"]),
            n_layers=int(model["n_layers"]),
            use_reset_gate=bool(model["use_reset_gate"]),
        )
    except (KeyError, AttributeError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: incomplete checkpoint ({exc})") from exc
