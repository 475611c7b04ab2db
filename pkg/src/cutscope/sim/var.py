"""Sparse vector-autoregressive benchmark with a known Granger graph."""

from __future__ import annotations

import logging

import numpy as np
import numpy.typing as npt

from cutscope.data import GroundTruthGraph, TimeSeriesPanel
from cutscope.models import VarConfig
from cutscope.sim.errors import SimulationError

BURN_IN_STEPS = 200
MIN_COEFFICIENT = 0.1
STABILITY_TARGET = 0.95
MAX_RESCALES = 100
BLOW_UP_LIMIT = 1e6

Coefficients = npt.NDArray[np.float64]

logger = logging.getLogger(__name__)


def sample_var_coefficients(
    cfg: VarConfig, rng: np.random.Generator
) -> tuple[Coefficients, npt.NDArray[np.int8]]:
    """``coefficients[k, i, j]`` is the effect of series ``i`` at lag ``k + 1`` on series ``j``.

    Every lag shares the sparsity pattern of the returned adjacency, which always
    contains the self edges, and the sign of its edge.
    """
    n = cfg.n_series
    adjacency = rng.random((n, n)) < cfg.density
    np.fill_diagonal(adjacency, True)
    low = min(MIN_COEFFICIENT, cfg.coeff_scale)
    magnitude = rng.uniform(low, cfg.coeff_scale, size=(cfg.tau_max, n, n))
    # one sign per edge, shared by every lag
    sign = rng.choice(np.array([-1.0, 1.0]), size=(n, n))
    coefficients = magnitude * (sign * adjacency)[None, :, :]
    return coefficients, adjacency.astype(np.int8)


def companion_matrix(coefficients: Coefficients) -> npt.NDArray[np.float64]:
    tau_max, n, _ = coefficients.shape
    companion = np.zeros((n * tau_max, n * tau_max), dtype=np.float64)
    companion[:n, :] = np.hstack([block.T for block in coefficients])
    if tau_max > 1:
        companion[n:, : n * (tau_max - 1)] = np.eye(n * (tau_max - 1))
    return companion


def spectral_radius(coefficients: Coefficients) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(coefficients)))))


def stabilize_coefficients(coefficients: Coefficients) -> Coefficients:
    """Rescale globally by ``0.95 / rho`` until the companion spectral radius is below one."""
    stable = np.array(coefficients, dtype=np.float64, copy=True)
    for _ in range(MAX_RESCALES):
        radius = spectral_radius(stable)
        if radius < 1.0:
            return stable
        stable *= STABILITY_TARGET / radius
    raise SimulationError(f"VAR coefficients not stable after {MAX_RESCALES} rescales")


def simulate_var(
    coefficients: Coefficients,
    length: int,
    noise_sigma: float,
    rng: np.random.Generator,
    burn_in: int = BURN_IN_STEPS,
) -> npt.NDArray[np.float64]:
    """Run the recursion; the first ``tau_max`` steps are pure noise, then ``burn_in`` are dropped.

    Returns an N x length matrix.
    """
    tau_max, n, _ = coefficients.shape
    total = tau_max + burn_in + length
    noise = rng.normal(0.0, noise_sigma, size=(total, n))
    trajectory = np.zeros((total, n), dtype=np.float64)
    trajectory[:tau_max] = noise[:tau_max]
    for t in range(tau_max, total):
        lagged = trajectory[t - tau_max : t][::-1]
        trajectory[t] = np.einsum("ki,kij->j", lagged, coefficients) + noise[t]

    if not np.all(np.isfinite(trajectory)) or np.abs(trajectory).max() > BLOW_UP_LIMIT:
        raise SimulationError("VAR trajectory diverged; coefficients are not stationary")
    return np.ascontiguousarray(trajectory[tau_max + burn_in :].T)


def gen_var(cfg: VarConfig) -> tuple[TimeSeriesPanel, GroundTruthGraph]:
    if cfg.n_series * cfg.density < 1.0:
        logger.warning(
            "sparse VAR graph: fewer than one cross parent per series on average",
            extra={"n_series": cfg.n_series, "density": cfg.density},
        )
    rng = np.random.default_rng(cfg.seed)
    coefficients, adjacency = sample_var_coefficients(cfg, rng)
    coefficients = stabilize_coefficients(coefficients)
    values = simulate_var(coefficients, cfg.length, cfg.noise_sigma, rng)
    logger.debug(
        "simulated VAR panel",
        extra={"n_series": cfg.n_series, "length": cfg.length, "edges": int(adjacency.sum())},
    )
    return TimeSeriesPanel(values), GroundTruthGraph(adjacency)
