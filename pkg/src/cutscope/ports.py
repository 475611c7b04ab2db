from __future__ import annotations

from typing import Protocol

import numpy as np
import numpy.typing as npt


class NumericalFailure(RuntimeError):
    pass


class OneStepPredictor(Protocol):
    """Predicts x[:, t] in raw units from the raw history x[:, t - W : t] (shape N x W)."""

    def __call__(self, history: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]: ...
