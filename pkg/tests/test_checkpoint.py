from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

from cutscope.checkpoint import (
    CHECKPOINT_FORMAT,
    Checkpoint,
    CheckpointFormatError,
    load_checkpoint,
    save_checkpoint,
)
from cutscope.predictor import MPGNNPredictor


def _checkpoint() -> Checkpoint:
    torch.manual_seed(0)
    model = MPGNNPredictor(3, hidden_dim=4)
    return Checkpoint(
        epoch=7,
        predictor_state=model.state_dict(),
        logits=torch.tensor([[0.5, -1.0, 2.0]], dtype=torch.float64, requires_grad=True),
        membership=np.ones((1, 3), dtype=np.int8),
        temperature=0.25,
        imputation=np.arange(6.0).reshape(3, 2),
        hidden_dim=4,
        n_layers=1,
        use_reset_gate=False,
    )


def test_checkpoint_restores_a_working_predictor(tmp_path: Path) -> None:
    original = _checkpoint()

    loaded = load_checkpoint(save_checkpoint(original, tmp_path / "nested" / "epoch-7.pt"))

    assert loaded.epoch == 7
    assert loaded.temperature == 0.25
    np.testing.assert_array_equal(loaded.membership, original.membership)
    np.testing.assert_array_equal(loaded.imputation, original.imputation)
    torch.testing.assert_close(loaded.logits, original.logits.detach())
    restored = MPGNNPredictor(3, hidden_dim=loaded.hidden_dim, n_layers=loaded.n_layers)
    restored.load_state_dict(loaded.predictor_state)
    for name, value in original.predictor_state.items():
        torch.testing.assert_close(restored.state_dict()[name], value)


def test_load_checkpoint_rejects_foreign_payload(tmp_path: Path) -> None:
    path = tmp_path / "other.pt"
    torch.save({"format": "something-else"}, path)

    with pytest.raises(CheckpointFormatError, match=CHECKPOINT_FORMAT):
        load_checkpoint(path)


def test_load_checkpoint_rejects_incomplete_payload(tmp_path: Path) -> None:
    path = tmp_path / "partial.pt"
    torch.save({"format": CHECKPOINT_FORMAT, "epoch": 1}, path)

    with pytest.raises(CheckpointFormatError, match="incomplete"):
        load_checkpoint(path)


def test_load_checkpoint_rejects_garbage(tmp_path: Path) -> None:
    path = tmp_path / "garbage.pt"
    path.write_bytes(b"not a checkpoint")

    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
