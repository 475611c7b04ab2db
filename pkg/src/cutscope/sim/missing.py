"""Missing-completely-at-random corruption: random missing (RM) and random block missing (RBM)."""

from __future__ import annotations

import numpy as np

from cutscope.data import ObservationMask, TimeSeriesPanel
from cutscope.models import MissingConfig, MissingKind


def apply_missing(mask_cfg: MissingConfig, panel: TimeSeriesPanel) -> ObservationMask:
    n_series, length = panel.n_series, panel.length
    if mask_cfg.kind is MissingKind.NONE:
        return ObservationMask.full(n_series, length)

    rng = np.random.default_rng(mask_cfg.seed)
    observed = rng.random((n_series, length)) >= mask_cfg.p
    if mask_cfg.kind is MissingKind.RBM:
        # overlapping blocks simply merge
        n_blocks = int(rng.poisson(mask_cfg.p_blk * n_series * length))
        series = rng.integers(0, n_series, size=n_blocks)
        drawn = rng.integers(mask_cfg.l_min, mask_cfg.l_max + 1, size=n_blocks)
        lengths = np.minimum(drawn, length)
        for row, block in zip(series, lengths, strict=True):
            start = int(rng.integers(0, length - block + 1))
            observed[row, start : start + block] = False
    return ObservationMask(observed)
