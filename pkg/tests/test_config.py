from __future__ import annotations

import json
from pathlib import Path

import pytest

from cutscope.config import (
    ConfigError,
    config_to_dict,
    has_errors,
    load_config,
    parse_config,
    validate_config,
)
from cutscope.models import CsvSource, MissingKind, VarConfig


def _write_config(path: Path, payload: object) -> Path:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_load_config_reads_sections_and_defaults(tmp_path: Path) -> None:
    config_file = _write_config(
        tmp_path / "run.json",
        {
            "seed": 3,
            "data": {"var": {"n_series": 8, "length": 200}},
            "missing": {"kind": "RBM", "p": 0.1, "p_blk": 0.002},
            "train": {"epochs": 50, "gumbel": {"start": 2.0, "end": 0.5}},
            "logging": {"level": "debug", "json": False},
        },
    )

    config = load_config(config_file)

    assert config.seed == 3
    assert config.data == VarConfig(n_series=8, length=200)
    assert config.missing.kind is MissingKind.RBM
    assert config.train.epochs == 50
    assert config.train.gumbel.start == 2.0
    assert config.train.lambda_sparsity == 5e-4
    assert config.train.history == 3
    assert config.logging.level == "DEBUG"
    assert not config.logging.json


def test_csv_paths_resolve_relative_to_config_file(tmp_path: Path) -> None:
    (tmp_path / "configs").mkdir()
    config_file = _write_config(
        tmp_path / "configs" / "run.json",
        {"data": {"csv": {"panel": "../data/panel.csv", "delimiter": "\t"}}},
    )

    config = load_config(config_file)

    assert isinstance(config.data, CsvSource)
    assert config.data.panel == (tmp_path / "data" / "panel.csv").resolve()
    assert config.data.delimiter == "\t"
    assert config.data.mask is None


def test_validate_collects_every_problem(tmp_path: Path) -> None:
    config_file = _write_config(
        tmp_path / "run.json",
        {
            "data": {"var": {"n_series": 4, "length": 50}},
            "missing": {"kind": "rm", "p": 1.0},
            "train": {"epochs": 0, "initial_groups": 9, "colour": "red"},
        },
    )

    diagnostics = validate_config(config_file)
    rendered = [str(diagnostic) for diagnostic in diagnostics]

    assert has_errors(diagnostics)
    assert "info: seed: seed not set; using 0" in rendered
    assert "error: missing.p: p must be in [0,1)" in rendered
    assert "error: train.epochs: epochs must be at least 1" in rendered
    assert "error: train.colour: unknown key" in rendered
    assert "error: train.initial_groups: initial_groups 9 exceeds n_series 4" in rendered


def test_seed_warning_alone_is_not_an_error(tmp_path: Path) -> None:
    config_file = _write_config(tmp_path / "run.json", {"data": {"var": {}}})

    diagnostics = validate_config(config_file)

    assert [diagnostic.severity for diagnostic in diagnostics] == ["info"]
    assert not has_errors(diagnostics)


@pytest.mark.parametrize(
    ("payload", "message"),
    [
        ({"seed": 1}, "data section is required"),
        ({"data": {"var": {}, "lorenz96": {}}}, "exactly one of var, lorenz96, csv"),
        ({"data": {"lorenz96": {"n_series": 3}}}, "n_series must be at least 4"),
        ({"data": {"var": {"length": 3}}, "train": {"tau_max": 3}}, "must be shorter than"),
        ({"data": {"var": {"density": "high"}}}, "must be a finite number"),
        ({"data": {"var": {"density": 0.0}}}, r"density must be in \(0,1\]"),
        ({"data": {"var": {"density": 1.5}}}, r"density must be in \(0,1\]"),
        ({"data": {"var": {"noise_sigma": 0.0}}}, "noise_sigma must be positive"),
        ({"data": {"var": {}}, "seed": True}, "seed must be an integer"),
        ({"data": {"csv": {"panel": "p.csv", "delimiter": ";;"}}}, "single character"),
        ([1, 2], "root must be an object"),
    ],
)
def test_load_config_rejects_invalid_documents(
    tmp_path: Path, payload: object, message: str
) -> None:
    config_file = _write_config(tmp_path / "run.json", payload)

    with pytest.raises(ConfigError, match=message):
        load_config(config_file)


def test_load_config_reports_missing_file_and_bad_json(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "absent.json")

    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(broken)


def test_fallback_data_stands_in_for_missing_section(tmp_path: Path) -> None:
    fallback = CsvSource(panel=tmp_path / "panel.csv")
    config_file = _write_config(tmp_path / "run.json", {"seed": 2})

    config = load_config(config_file, fallback)

    assert config.data is fallback


def test_config_to_dict_reloads_to_the_same_run(tmp_path: Path) -> None:
    original = load_config(
        _write_config(
            tmp_path / "run.json",
            {
                "seed": 4,
                "seeds": [1, 2],
                "data": {"lorenz96": {"n_series": 6, "forcing": 8.0}},
                "train": {"window_width": 5, "gumbel": {"decay_epochs": 30}},
            },
        )
    )

    document = config_to_dict(original)
    cfg, diagnostics = parse_config(json.loads(json.dumps(document)), tmp_path)

    assert not has_errors(diagnostics)
    assert cfg == original


def test_for_seed_offsets_every_random_stream(tmp_path: Path) -> None:
    config = load_config(
        _write_config(tmp_path / "run.json", {"seeds": [7, 8], "data": {"var": {}}})
    )

    seeded = config.for_seed(7)

    assert config.run_seeds == (7, 8)
    assert isinstance(seeded.data, VarConfig)
    assert (seeded.data.seed, seeded.missing.seed, seeded.train.seed) == (7, 8, 9)
    assert seeded.seeds == ()
