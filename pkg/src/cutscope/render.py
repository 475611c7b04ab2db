"""SVG heatmap of a discovered graph next to its ground truth.

Colour ramp: linear in each RGB channel from ``#ffffff`` (probability 0) to
``#08306b`` (probability 1). Values outside [0, 1] are clipped.
"""

from __future__ import annotations

from pathlib import Path
from xml.etree import ElementTree

import numpy as np
import numpy.typing as npt

from cutscope.data import ShapeMismatchError

SVG_NAMESPACE = "http://www.w3.org/2000/svg"
RAMP_LOW = (0xFF, 0xFF, 0xFF)
RAMP_HIGH = (0x08, 0x30, 0x6B)
CELL = 12
GAP = 24
MARGIN = 20


def ramp_color(value: float) -> str:
    weight = min(max(float(value), 0.0), 1.0)
    pairs = zip(RAMP_LOW, RAMP_HIGH, strict=True)
    return "#" + "".join(f"{round(lo + (hi - lo) * weight):02x}" for lo, hi in pairs)


def _panel(
    parent: ElementTree.Element,
    panel_id: str,
    matrix: npt.NDArray[np.float64],
    x_offset: int,
) -> None:
    group = ElementTree.SubElement(parent, "g", {"id": panel_id})
    title = ElementTree.SubElement(
        group, "text", {"x": str(x_offset), "y": str(MARGIN - 6), "font-size": "10"}
    )
    title.text = panel_id
    for (row, column), value in np.ndenumerate(matrix):
        ElementTree.SubElement(
            group,
            "rect",
            {
                "x": str(x_offset + column * CELL),
                "y": str(MARGIN + row * CELL),
                "width": str(CELL),
                "height": str(CELL),
                "fill": ramp_color(value),
                "data-source": str(row),
                "data-target": str(column),
            },
        )


def heatmap_svg(cpg: npt.ArrayLike, truth: npt.ArrayLike) -> str:
    left = np.asarray(cpg, dtype=np.float64)
    right = np.asarray(truth, dtype=np.float64)
    if left.ndim != 2 or left.shape[0] != left.shape[1] or left.shape != right.shape:
        raise ShapeMismatchError(
            f"heatmap needs two square matrices of equal size, got {left.shape} and {right.shape}"
        )
    n = left.shape[0]
    side = n * CELL
    root = ElementTree.Element(
        "svg",
        {
            "xmlns": SVG_NAMESPACE,
            "width": str(2 * side + GAP + 2 * MARGIN),
            "height": str(side + 2 * MARGIN),
            "viewBox": f"0 0 {2 * side + GAP + 2 * MARGIN} {side + 2 * MARGIN}",
        },
    )
    _panel(root, "cpg", left, MARGIN)
    _panel(root, "truth", right, MARGIN + side + GAP)
    return ElementTree.tostring(root, encoding="unicode")


def render_heatmap(cpg: npt.ArrayLike, truth: npt.ArrayLike, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(heatmap_svg(cpg, truth) + "\n", encoding="utf-8")
    return path
