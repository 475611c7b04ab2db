"""Observation panels, masks, prediction windows and their CSV formats.

Panels are series-major: row ``i`` is series ``i`` and column ``t`` is time step ``t``
(0-based). Missing entries are stored as ``0.0`` under mask ``0``; nothing downstream
reads them directly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

FloatMatrix = npt.NDArray[np.float64]
BoolMatrix = npt.NDArray[np.bool_]

HEADER_CELL = re.compile(r"t\d+")
DEFAULT_MISSING_TOKEN = "NaN"
STD_FLOOR = 1e-8


class PanelFormatError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class WindowError(ValueError):
    pass


def _readonly(array: npt.NDArray[np.generic]) -> npt.NDArray[np.generic]:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TimeSeriesPanel:
    values: FloatMatrix

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ShapeMismatchError(f"panel must be a non-empty N x T matrix, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise PanelFormatError("panel values must be finite; store missing entries as 0.0")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def n_series(self) -> int:
        return int(self.values.shape[0])

    @property
    def length(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class ObservationMask:
    observed: BoolMatrix

    def __post_init__(self) -> None:
        raw = np.asarray(self.observed)
        if raw.ndim != 2:
            raise ShapeMismatchError(f"mask must be an N x T matrix, got {raw.shape}")
        if raw.dtype != np.bool_ and not np.isin(raw, (0, 1)).all():
            raise PanelFormatError("mask entries must be 0 or 1")
        object.__setattr__(self, "observed", _readonly(raw.astype(np.bool_, copy=True)))

    @classmethod
    def full(cls, n_series: int, length: int) -> ObservationMask:
        return cls(np.ones((n_series, length), dtype=np.bool_))

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.observed.shape[0]), int(self.observed.shape[1]))

    @property
    def observed_fraction(self) -> float:
        return float(self.observed.mean()) if self.observed.size else 0.0

    def as_float(self) -> FloatMatrix:
        return self.observed.astype(np.float64)


@dataclass(frozen=True)
class GroundTruthGraph:
    """``adjacency[i, j] == 1`` iff series ``i`` Granger-causes series ``j``."""

    adjacency: npt.NDArray[np.generic]

    def __post_init__(self) -> None:
        raw = np.asarray(self.adjacency)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ShapeMismatchError(f"ground truth must be square, got {raw.shape}")
        if not np.isin(raw, (0, 1)).all():
            raise PanelFormatError("ground truth entries must be 0 or 1")
        object.__setattr__(self, "adjacency", _readonly(raw.astype(np.int8, copy=True)))

    @property
    def n_series(self) -> int:
        return int(self.adjacency.shape[0])


@dataclass(frozen=True)
class Window:
    start: int
    width: int
    target_offset: int

    @property
    def target(self) -> int:
        return self.start + self.target_offset


def ensure_aligned(panel: TimeSeriesPanel, mask: ObservationMask) -> None:
    if panel.values.shape != mask.observed.shape:
        raise ShapeMismatchError(
            f"panel shape {panel.values.shape} does not match mask shape {mask.observed.shape}"
        )


def make_windows(panel: TimeSeriesPanel, tau_max: int, stride: int = 1) -> list[Window]:
    """Windows of ``tau_max`` history steps plus one target step, left to right."""
    if tau_max < 1:
        raise WindowError("tau_max must be at least 1")
    if stride < 1:
        raise WindowError("stride must be at least 1")
    if panel.length <= tau_max:
        raise WindowError(f"panel length {panel.length} must exceed tau_max {tau_max}")
    return [
        Window(start=start, width=tau_max + 1, target_offset=tau_max)
        for start in range(0, panel.length - tau_max, stride)
    ]


def load_csv(
    path: Path,
    delimiter: str = ",",
    missing_token: str = DEFAULT_MISSING_TOKEN,
    header: bool | None = None,
) -> tuple[TimeSeriesPanel, ObservationMask]:
    """Read one series per row; ``header=None`` detects a ``t0,t1,...`` header row."""
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=None,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError as exc:
        raise PanelFormatError(f"panel file is empty: {path}") from exc
    except pd.errors.ParserError as exc:
        raise PanelFormatError(f"ragged rows in {path}: {exc}") from exc

    short_cells = frame.isna().to_numpy()
    if short_cells.any():
        row = int(np.argwhere(short_cells)[0][0])
        raise PanelFormatError(f"ragged rows in {path}: line {row + 1} has too few columns")

    cells = np.char.strip(frame.to_numpy(dtype=str))
    if header is None:
        header = all(HEADER_CELL.fullmatch(str(cell)) is not None for cell in cells[0])
    line_offset = 1
    if header:
        cells = cells[1:]
        line_offset = 2
    if cells.shape[0] == 0:
        raise PanelFormatError(f"panel file has no data rows: {path}")

    missing = cells == missing_token
    numeric_text = np.where(missing, "0", cells)
    try:
        values = numeric_text.astype(np.float64)
    except ValueError:
        values = _parse_cells(numeric_text, path, line_offset)

    not_finite = ~np.isfinite(values)
    if not_finite.any():
        row, column = (int(index) for index in np.argwhere(not_finite)[0])
        raise PanelFormatError(
            f"{path}: line {row + line_offset}, column {column + 1}: "
            f"{cells[row, column]!r} is not a finite number"
        )
    values[missing] = 0.0
    return TimeSeriesPanel(values), ObservationMask(~missing)


def _parse_cells(cells: npt.NDArray[np.str_], path: Path, line_offset: int) -> FloatMatrix:
    values = np.empty(cells.shape, dtype=np.float64)
    for (row, column), cell in np.ndenumerate(cells):
        try:
            values[row, column] = float(cell)
        except ValueError as exc:
            raise PanelFormatError(
                f"{path}: line {row + line_offset}, column {column + 1}: "
                f"cannot parse {str(cell)!r} as a number"
            ) from exc
    return values


def save_csv(
    panel: TimeSeriesPanel,
    mask: ObservationMask,
    path: Path,
    missing_token: str = DEFAULT_MISSING_TOKEN,
) -> None:
    ensure_aligned(panel, mask)
    frame = pd.DataFrame(
        np.where(mask.observed, panel.values, np.nan),
        columns=[f"t{index}" for index in range(panel.length)],
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, na_rep=missing_token)


def save_matrix(matrix: npt.ArrayLike, path: Path) -> None:
    """Plain comma-separated matrix; ``%.17g`` round-trips every binary64 value."""
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if not np.all(np.isfinite(array)):
        raise PanelFormatError(f"refusing to write non-finite matrix to {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if array.size == 0:
        path.write_text("", encoding="utf-8")
        return
    np.savetxt(path, array, delimiter=",", fmt="%.17g")


def load_matrix(path: Path) -> FloatMatrix:
    text = path.read_text(encoding="utf-8")
    if text.strip() == "":
        return np.zeros((0, 0), dtype=np.float64)
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise PanelFormatError(f"cannot parse matrix file {path}: {exc}") from exc


def load_truth(path: Path) -> GroundTruthGraph:
    return GroundTruthGraph(load_matrix(path))


def zoh_fill(panel: TimeSeriesPanel, mask: ObservationMask) -> FloatMatrix:
    """Zero-order hold along time; gaps before the first observation hold 0.0."""
    ensure_aligned(panel, mask)
    frame = pd.DataFrame(panel.values.T).where(mask.observed.T)
    return np.ascontiguousarray(frame.ffill().fillna(0.0).to_numpy(dtype=np.float64).T)


@dataclass(frozen=True)
class Standardizer:
    mean: npt.NDArray[np.float64]
    scale: npt.NDArray[np.float64]

    @classmethod
    def fit(cls, panel: TimeSeriesPanel, mask: ObservationMask) -> Standardizer:
        ensure_aligned(panel, mask)
        counts = mask.observed.sum(axis=1)
        weights = mask.as_float()
        safe_counts = np.maximum(counts, 1)
        mean = (panel.values * weights).sum(axis=1) / safe_counts
        variance = (((panel.values - mean[:, None]) * weights) ** 2).sum(axis=1) / safe_counts
        scale = np.sqrt(variance)
        scale = np.where((counts == 0) | (scale < STD_FLOOR), 1.0, scale)
        mean = np.where(counts == 0, 0.0, mean)
        return cls(mean=mean, scale=scale)

    def transform(self, values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        shape = (-1,) + (1,) * (values.ndim - 1)
        return (values - self.mean.reshape(shape)) / self.scale.reshape(shape)

    def inverse(self, values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        shape = (-1,) + (1,) * (values.ndim - 1)
        return values * self.scale.reshape(shape) + self.mean.reshape(shape)
