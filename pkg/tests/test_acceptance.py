"""End-to-end recovery checks on simulated data; run with ``pytest -m slow``."""

from __future__ import annotations

import numpy as np
import pytest

from cutscope.data import ObservationMask, TimeSeriesPanel, zoh_fill
from cutscope.evaluation import auroc
from cutscope.models import (
    Lorenz96Config,
    MissingConfig,
    MissingKind,
    ModelConfig,
    RunConfig,
    TrainConfig,
    VarConfig,
)
from cutscope.pipeline import corrupt, load_source
from cutscope.predictor import MPGNNPredictor, measure_step_time
from cutscope.trainer import fit, imputation_rmse

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)


def _seed_auroc(cfg: RunConfig, seed: int) -> tuple[float, float, float]:
    """AUROC, imputation RMSE and ZOH RMSE for one seed of ``cfg``."""
    seeded = cfg.for_seed(seed)
    source = corrupt(load_source(seeded.data), seeded.missing)
    assert source.truth is not None and source.clean is not None
    result = fit(source.panel, source.mask, seeded.train, seeded.model)
    clean = source.clean.values
    return (
        auroc(result.cpg, source.truth).auroc,
        imputation_rmse(result.imputed, clean, source.mask),
        imputation_rmse(zoh_fill(source.panel, source.mask), clean, source.mask),
    )


def _mean_auroc(cfg: RunConfig) -> float:
    return float(np.mean([_seed_auroc(cfg, seed)[0] for seed in SEEDS]))


VAR_16 = VarConfig(n_series=16, length=1000, tau_max=3, density=0.2)
LORENZ_16 = Lorenz96Config(n_series=16, length=1000, forcing=10.0)


def test_var_without_missing_data() -> None:
    assert _mean_auroc(RunConfig(data=VAR_16)) >= 0.95


@pytest.mark.parametrize(("p", "threshold"), [(0.3, 0.90), (0.6, 0.80)])
def test_var_with_random_missing(p: float, threshold: float) -> None:
    cfg = RunConfig(data=VAR_16, missing=MissingConfig(kind=MissingKind.RM, p=p))

    assert _mean_auroc(cfg) >= threshold


def test_lorenz_without_missing_data() -> None:
    assert _mean_auroc(RunConfig(data=LORENZ_16)) >= 0.95


def test_lorenz_with_block_missing() -> None:
    missing = MissingConfig(kind=MissingKind.RBM, p=0.0, p_blk=0.003, l_min=5, l_max=20)

    assert _mean_auroc(RunConfig(data=LORENZ_16, missing=missing)) >= 0.90


def test_learned_imputation_beats_zero_order_hold() -> None:
    cfg = RunConfig(
        data=VarConfig(n_series=8, length=1000),
        missing=MissingConfig(kind=MissingKind.RM, p=0.3),
        train=TrainConfig(epochs=100),
    )

    wins = 0
    for seed in SEEDS:
        _, learned, held = _seed_auroc(cfg, seed)
        wins += learned <= held
    assert wins >= 4


def test_coarse_to_fine_is_no_worse_than_fine_only() -> None:
    full = _mean_auroc(RunConfig(data=LORENZ_16))
    fine_only = _mean_auroc(RunConfig(data=LORENZ_16, train=TrainConfig(use_c2fd=False)))

    assert fine_only <= full


def test_step_time_grows_sub_quadratically() -> None:
    small = measure_step_time(32, repeats=10)
    large = measure_step_time(128, repeats=10)

    assert large <= 8.0 * small
    assert (
        MPGNNPredictor(32).encoder_block_count() == MPGNNPredictor(128).encoder_block_count()
    )


def test_full_run_leaves_observed_entries_untouched() -> None:
    panel = TimeSeriesPanel(np.random.default_rng(0).normal(size=(4, 200)))
    observed = np.random.default_rng(1).random((4, 200)) > 0.5
    hidden = TimeSeriesPanel(np.where(observed, panel.values, 0.0))

    result = fit(hidden, ObservationMask(observed), TrainConfig(epochs=20), ModelConfig())

    np.testing.assert_array_equal(result.imputed[observed], panel.values[observed])
