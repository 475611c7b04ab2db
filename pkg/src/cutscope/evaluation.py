"""Scoring discovered causal probability graphs against a ground truth."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.stats import pearsonr, rankdata, spearmanr
from sklearn.metrics import average_precision_score, roc_curve

from cutscope.data import GroundTruthGraph, ShapeMismatchError, load_matrix, load_truth
from cutscope.render import render_heatmap

REPORT_SCHEMA = "cuts-scope/report-v1"
EDGE_THRESHOLD = 0.5
SCORE_VIEWS = ("include_diagonal", "exclude_diagonal")

logger = logging.getLogger(__name__)


class DegenerateTruthError(ValueError):
    pass


class ReportSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreReport:
    auroc: float
    auprc: float
    n_edges_true: int
    exclude_diagonal: bool
    threshold_curve: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "n_edges_true": self.n_edges_true,
            "exclude_diagonal": self.exclude_diagonal,
            "threshold_curve": [[fpr, tpr] for fpr, tpr in self.threshold_curve],
        }


@dataclass(frozen=True)
class ReportOptions:
    exclude_diagonal: bool = False
    heatmap_path: Path | None = None
    config: Mapping[str, Any] | None = None


@dataclass(frozen=True)
class ReferenceComparison:
    pearson: float
    spearman: float
    n_entries: int

    def to_dict(self) -> dict[str, Any]:
        return {"pearson": self.pearson, "spearman": self.spearman, "n_entries": self.n_entries}


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    probability: float


def _scored_entries(
    scores: npt.ArrayLike, shape: tuple[int, ...], exclude_diagonal: bool
) -> npt.NDArray[np.float64]:
    matrix = np.asarray(scores, dtype=np.float64)
    if matrix.shape != shape:
        raise ShapeMismatchError(f"scores shape {matrix.shape} does not match {shape}")
    if exclude_diagonal:
        return matrix[~np.eye(shape[0], dtype=np.bool_)]
    return matrix.ravel()


def auroc(
    scores: npt.ArrayLike, truth: GroundTruthGraph, exclude_diagonal: bool = False
) -> ScoreReport:
    """Mann-Whitney AUROC: chance a random true edge outscores a random non-edge, ties 1/2."""
    shape = truth.adjacency.shape
    values = _scored_entries(scores, shape, exclude_diagonal)
    labels = _scored_entries(truth.adjacency, shape, exclude_diagonal).astype(np.int64)
    if not np.all(np.isfinite(values)):
        raise ValueError("scores must be finite")

    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTruthError("degenerate truth")

    ranks = rankdata(values)
    u_statistic = float(ranks[positives].sum()) - n_pos * (n_pos + 1) / 2.0
    fpr, tpr, _ = roc_curve(labels, values, drop_intermediate=False)
    return ScoreReport(
        auroc=u_statistic / (n_pos * n_neg),
        auprc=float(average_precision_score(labels, values)),
        n_edges_true=n_pos,
        exclude_diagonal=exclude_diagonal,
        threshold_curve=[(float(x), float(y)) for x, y in zip(fpr, tpr, strict=True)],
    )


def score_views(
    scores: npt.ArrayLike, truth: GroundTruthGraph
) -> dict[str, ScoreReport | None]:
    """Both diagonal conventions; a view whose truth is degenerate maps to ``None``."""
    views: dict[str, ScoreReport | None] = {}
    for name in SCORE_VIEWS:
        try:
            views[name] = auroc(scores, truth, exclude_diagonal=name == "exclude_diagonal")
        except DegenerateTruthError:
            views[name] = None
    return views


def report(
    cpg_path: Path, truth_path: Path, out_path: Path, options: ReportOptions | None = None
) -> ScoreReport:
    options = options or ReportOptions()
    cpg = load_matrix(cpg_path)
    truth = load_truth(truth_path)
    if cpg.shape != truth.adjacency.shape:
        raise ShapeMismatchError(
            f"CPG {cpg_path} is {cpg.shape} but truth {truth_path} is {truth.adjacency.shape}"
        )

    views = score_views(cpg, truth)
    primary_name = "exclude_diagonal" if options.exclude_diagonal else "include_diagonal"
    primary = views[primary_name]
    if primary is None:
        raise DegenerateTruthError("degenerate truth")

    payload = {
        "schema": REPORT_SCHEMA,
        "cpg": str(cpg_path),
        "truth": str(truth_path),
        "primary": primary_name,
        "scores": {name: None if view is None else view.to_dict() for name, view in views.items()},
        "config": dict(options.config) if options.config is not None else None,
    }
    validate_report_payload(payload)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if options.heatmap_path is not None:
        render_heatmap(cpg, truth.adjacency, options.heatmap_path)
    logger.info(
        "report written",
        extra={"path": str(out_path), "auroc": primary.auroc, "stage": "evaluate"},
    )
    return primary


def _check_score_block(name: str, block: Any, problems: list[str]) -> None:
    if not isinstance(block, dict):
        problems.append(f"scores.{name} must be an object")
        return
    value = block.get("auroc")
    if not isinstance(value, int | float) or not 0.0 <= float(value) <= 1.0:
        problems.append(f"scores.{name}.auroc must be a number in [0, 1]")
    if not isinstance(block.get("auprc"), int | float):
        problems.append(f"scores.{name}.auprc must be a number")
    n_edges = block.get("n_edges_true")
    if not isinstance(n_edges, int) or isinstance(n_edges, bool):
        problems.append(f"scores.{name}.n_edges_true must be an integer")
    if not isinstance(block.get("exclude_diagonal"), bool):
        problems.append(f"scores.{name}.exclude_diagonal must be a boolean")
    curve = block.get("threshold_curve")
    if not isinstance(curve, list) or not all(
        isinstance(point, list) and len(point) == 2 for point in curve
    ):
        problems.append(f"scores.{name}.threshold_curve must be a list of [fpr, tpr] pairs")
        return
    points = np.asarray(curve, dtype=np.float64).reshape(-1, 2)
    if np.any(np.diff(points, axis=0) < 0):
        problems.append(f"scores.{name}.threshold_curve must be nondecreasing")


def validate_report_payload(payload: Any) -> None:
    problems: list[str] = []
    if not isinstance(payload, dict):
        raise ReportSchemaError("report must be a JSON object")
    if payload.get("schema") != REPORT_SCHEMA:
        problems.append(f"schema must be {REPORT_SCHEMA!r}")
    for key in ("cpg", "truth"):
        if not isinstance(payload.get(key), str):
            problems.append(f"{key} must be a string path")
    if payload.get("primary") not in SCORE_VIEWS:
        problems.append(f"primary must be one of {', '.join(SCORE_VIEWS)}")
    scores = payload.get("scores")
    if not isinstance(scores, dict) or set(scores) != set(SCORE_VIEWS):
        problems.append(f"scores must hold exactly {', '.join(SCORE_VIEWS)}")
    else:
        for name in SCORE_VIEWS:
            if scores[name] is None and name == payload.get("primary"):
                problems.append(f"scores.{name} is the primary view and cannot be null")
            elif scores[name] is not None:
                _check_score_block(name, scores[name], problems)
    if payload.get("config") is not None and not isinstance(payload.get("config"), dict):
        problems.append("config must be an object or null")
    if problems:
        raise ReportSchemaError("; ".join(problems))


def compare_to_reference(
    cpg: npt.ArrayLike, reference: npt.ArrayLike, exclude_diagonal: bool = True
) -> ReferenceComparison:
    """Correlation with a reference matrix for data without a ground-truth graph."""
    reference_matrix = np.asarray(reference, dtype=np.float64)
    if reference_matrix.ndim != 2 or reference_matrix.shape[0] != reference_matrix.shape[1]:
        raise ShapeMismatchError(f"reference must be square, got {reference_matrix.shape}")
    shape = reference_matrix.shape
    ours = _scored_entries(cpg, shape, exclude_diagonal)
    theirs = _scored_entries(reference_matrix, shape, exclude_diagonal)
    if ours.size < 2 or np.ptp(ours) == 0 or np.ptp(theirs) == 0:
        raise DegenerateTruthError("correlation needs two or more non-constant entries")
    return ReferenceComparison(
        pearson=float(pearsonr(ours, theirs)[0]),
        spearman=float(spearmanr(ours, theirs)[0]),
        n_entries=int(ours.size),
    )


def threshold_edges(cpg: npt.ArrayLike, threshold: float = EDGE_THRESHOLD) -> list[Edge]:
    matrix = np.asarray(cpg, dtype=np.float64)
    sources, targets = np.nonzero(matrix > threshold)
    edges = [
        Edge(source=int(i), target=int(j), probability=float(matrix[i, j]))
        for i, j in zip(sources, targets, strict=True)
    ]
    return sorted(edges, key=lambda edge: (-edge.probability, edge.source, edge.target))


def save_edges(edges: Sequence[Edge], path: Path) -> None:
    frame = pd.DataFrame(
        [(edge.source, edge.target, edge.probability) for edge in edges],
        columns=["source", "target", "probability"],
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")


def _summary(values: list[float]) -> dict[str, Any]:
    array = np.asarray(values, dtype=np.float64)
    return {"mean": float(array.mean()), "std": float(array.std()), "values": values}


def aggregate(payloads: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Mean and population standard deviation of AUROC across per-seed reports."""
    if not payloads:
        raise ValueError("nothing to aggregate")
    result: dict[str, Any] = {"schema": "cuts-scope/aggregate-v1", "runs": len(payloads)}
    for name in SCORE_VIEWS:
        blocks = [payload["scores"][name] for payload in payloads]
        if any(block is None for block in blocks):
            result[name] = None
            continue
        result[name] = _summary([float(block["auroc"]) for block in blocks])
    return result
