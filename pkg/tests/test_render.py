from __future__ import annotations

from pathlib import Path
from xml.etree import ElementTree

import numpy as np
import pytest

from cutscope.data import ShapeMismatchError
from cutscope.render import SVG_NAMESPACE, heatmap_svg, ramp_color, render_heatmap

RECT = f"{{{SVG_NAMESPACE}}}rect"
GROUP = f"{{{SVG_NAMESPACE}}}g"


def test_ramp_endpoints_and_clipping() -> None:
    assert ramp_color(0.0) == "#ffffff"
    assert ramp_color(1.0) == "#08306b"
    assert ramp_color(-3.0) == "#ffffff"
    assert ramp_color(7.0) == "#08306b"
    assert ramp_color(0.5) == "#8498b5"


def test_heatmap_has_one_cell_per_entry_in_each_panel() -> None:
    cpg = np.array([[0.0, 1.0], [0.5, 0.25]])
    truth = np.array([[0, 1], [1, 0]])

    root = ElementTree.fromstring(heatmap_svg(cpg, truth))

    groups = {group.get("id"): group for group in root.iter(GROUP)}
    assert set(groups) == {"cpg", "truth"}
    cells = groups["cpg"].findall(RECT)
    assert len(cells) == 4
    by_edge = {(cell.get("data-source"), cell.get("data-target")): cell for cell in cells}
    assert by_edge[("0", "1")].get("fill") == "#08306b"
    assert by_edge[("0", "0")].get("fill") == "#ffffff"
    assert len(groups["truth"].findall(RECT)) == 4


def test_heatmap_rejects_mismatched_shapes() -> None:
    with pytest.raises(ShapeMismatchError):
        heatmap_svg(np.zeros((2, 2)), np.zeros((3, 3)))


def test_render_heatmap_writes_file(tmp_path: Path) -> None:
    path = render_heatmap(np.eye(2), np.eye(2), tmp_path / "out" / "heatmap.svg")

    assert path.read_text(encoding="utf-8").startswith("<svg")
