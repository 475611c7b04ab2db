"""Run configuration: one JSON document, validated by hand into ``RunConfig``.

Validation never stops at the first problem; every finding becomes a ``Diagnostic``
and ``load_config`` refuses the document when any of them is an error.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, TypeVar

from cutscope.models import (
    CsvSource,
    DataSource,
    EvalConfig,
    GumbelSchedule,
    Lorenz96Config,
    LoggingConfig,
    MissingConfig,
    MissingKind,
    ModelConfig,
    RunConfig,
    TrainConfig,
    VarConfig,
)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
DATA_SOURCES = ("var", "lorenz96", "csv")
TOP_LEVEL_KEYS = ("seed", "seeds", "data", "missing", "model", "train", "eval", "logging")
LORENZ_MIN_SERIES = 4

T = TypeVar("T")
Severity = Literal["error", "info"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.field}: {self.reason}"


def _resolve_path(value: str, base_dir: Path) -> Path:
    candidate = Path(value)
    if candidate.is_absolute():
        return candidate
    return (base_dir / candidate).resolve()


def _as_dict(raw: Any, field: str) -> dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError(f"{field} must be an object")
    return raw


def _as_str(raw: Any, field: str) -> str:
    if not isinstance(raw, str) or raw.strip() == "":
        raise ConfigError(f"{field} must be a non-empty string")
    return raw


def _as_bool(raw: Any, field: str) -> bool:
    if not isinstance(raw, bool):
        raise ConfigError(f"{field} must be a boolean")
    return raw


def _as_int(raw: Any, field: str) -> int:
    if not isinstance(raw, int) or isinstance(raw, bool):
        raise ConfigError(f"{field} must be an integer")
    return raw


def _as_float(raw: Any, field: str) -> float:
    if not isinstance(raw, int | float) or isinstance(raw, bool) or not math.isfinite(raw):
        raise ConfigError(f"{field} must be a finite number")
    return float(raw)


def _as_delimiter(raw: Any, field: str) -> str:
    if not isinstance(raw, str) or len(raw) != 1:
        raise ConfigError(f"{field} must be a single character")
    return raw


def _as_optional_int(raw: Any, field: str) -> int | None:
    return None if raw is None else _as_int(raw, field)


def _as_int_list(raw: Any, field: str) -> tuple[int, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{field} must be a non-empty array of integers")
    return tuple(_as_int(item, f"{field}[{index}]") for index, item in enumerate(raw))


class _Reader:
    def __init__(self) -> None:
        self.diagnostics: list[Diagnostic] = []

    def error(self, field: str, reason: str) -> None:
        self.diagnostics.append(Diagnostic("error", field, reason))

    def info(self, field: str, reason: str) -> None:
        self.diagnostics.append(Diagnostic("info", field, reason))

    def check(self, condition: bool, field: str, reason: str) -> None:
        if not condition:
            self.error(field, reason)

    def read(
        self,
        obj: dict[str, Any],
        key: str,
        prefix: str,
        convert: Callable[[Any, str], T],
        default: T,
    ) -> T:
        field = f"{prefix}.{key}" if prefix else key
        if key not in obj:
            return default
        try:
            return convert(obj[key], field)
        except ConfigError as exc:
            self.error(field, str(exc))
            return default

    def section(self, obj: dict[str, Any], key: str, allowed: tuple[str, ...]) -> dict[str, Any]:
        section = self.read(obj, key, "", _as_dict, {})
        self.reject_unknown(section, key, allowed)
        return section

    def reject_unknown(self, obj: dict[str, Any], prefix: str, allowed: tuple[str, ...]) -> None:
        for key in sorted(set(obj) - set(allowed)):
            self.error(f"{prefix}.{key}" if prefix else key, "unknown key")


def _read_var(reader: _Reader, raw: dict[str, Any]) -> VarConfig:
    prefix = "data.var"
    reader.reject_unknown(
        raw, prefix, ("n_series", "length", "tau_max", "density", "coeff_scale", "noise_sigma")
    )
    base = VarConfig()
    cfg = VarConfig(
        n_series=reader.read(raw, "n_series", prefix, _as_int, base.n_series),
        length=reader.read(raw, "length", prefix, _as_int, base.length),
        tau_max=reader.read(raw, "tau_max", prefix, _as_int, base.tau_max),
        density=reader.read(raw, "density", prefix, _as_float, base.density),
        coeff_scale=reader.read(raw, "coeff_scale", prefix, _as_float, base.coeff_scale),
        noise_sigma=reader.read(raw, "noise_sigma", prefix, _as_float, base.noise_sigma),
    )
    reader.check(cfg.n_series >= 1, f"{prefix}.n_series", "n_series must be at least 1")
    reader.check(cfg.length >= 1, f"{prefix}.length", "length must be at least 1")
    reader.check(cfg.tau_max >= 1, f"{prefix}.tau_max", "tau_max must be at least 1")
    reader.check(0.0 < cfg.density <= 1.0, f"{prefix}.density", "density must be in (0,1]")
    reader.check(cfg.coeff_scale > 0, f"{prefix}.coeff_scale", "coeff_scale must be positive")
    reader.check(cfg.noise_sigma > 0, f"{prefix}.noise_sigma", "noise_sigma must be positive")
    return cfg


def _read_lorenz(reader: _Reader, raw: dict[str, Any]) -> Lorenz96Config:
    prefix = "data.lorenz96"
    reader.reject_unknown(
        raw, prefix, ("n_series", "length", "forcing", "dt", "subsample", "noise_sigma")
    )
    base = Lorenz96Config()
    cfg = Lorenz96Config(
        n_series=reader.read(raw, "n_series", prefix, _as_int, base.n_series),
        length=reader.read(raw, "length", prefix, _as_int, base.length),
        forcing=reader.read(raw, "forcing", prefix, _as_float, base.forcing),
        dt=reader.read(raw, "dt", prefix, _as_float, base.dt),
        subsample=reader.read(raw, "subsample", prefix, _as_int, base.subsample),
        noise_sigma=reader.read(raw, "noise_sigma", prefix, _as_float, base.noise_sigma),
    )
    reader.check(
        cfg.n_series >= LORENZ_MIN_SERIES,
        f"{prefix}.n_series",
        f"n_series must be at least {LORENZ_MIN_SERIES}",
    )
    reader.check(cfg.length >= 1, f"{prefix}.length", "length must be at least 1")
    reader.check(cfg.dt > 0, f"{prefix}.dt", "dt must be positive")
    reader.check(cfg.subsample >= 1, f"{prefix}.subsample", "subsample must be at least 1")
    reader.check(cfg.noise_sigma >= 0, f"{prefix}.noise_sigma", "noise_sigma must be >= 0")
    return cfg


def _read_csv(reader: _Reader, raw: dict[str, Any], base_dir: Path) -> CsvSource | None:
    prefix = "data.csv"
    reader.reject_unknown(raw, prefix, ("panel", "mask", "truth", "delimiter", "missing_token"))
    panel = reader.read(raw, "panel", prefix, _as_str, "")
    if panel == "":
        reader.error(f"{prefix}.panel", "panel path is required")
        return None
    mask = reader.read(raw, "mask", prefix, _as_str, "")
    truth = reader.read(raw, "truth", prefix, _as_str, "")
    delimiter = reader.read(raw, "delimiter", prefix, _as_delimiter, ",")
    return CsvSource(
        panel=_resolve_path(panel, base_dir),
        mask=_resolve_path(mask, base_dir) if mask else None,
        truth=_resolve_path(truth, base_dir) if truth else None,
        delimiter=delimiter,
        missing_token=reader.read(raw, "missing_token", prefix, _as_str, "NaN"),
    )


def _read_data(
    reader: _Reader, raw: dict[str, Any], base_dir: Path, fallback: DataSource | None
) -> DataSource | None:
    if "data" not in raw and fallback is not None:
        return fallback
    if "data" not in raw:
        reader.error("data", "data section is required")
        return None
    data = reader.section(raw, "data", DATA_SOURCES)
    chosen = [name for name in DATA_SOURCES if name in data]
    if len(chosen) != 1:
        reader.error("data", "exactly one of var, lorenz96, csv is required")
        return None
    name = chosen[0]
    body = data[name]
    if not isinstance(body, dict):
        reader.error(f"data.{name}", f"data.{name} must be an object")
        return None
    if name == "var":
        return _read_var(reader, body)
    if name == "lorenz96":
        return _read_lorenz(reader, body)
    return _read_csv(reader, body, base_dir)


def _read_missing(reader: _Reader, raw: dict[str, Any]) -> MissingConfig:
    section = reader.section(raw, "missing", ("kind", "p", "p_blk", "l_min", "l_max"))
    base = MissingConfig()
    kind_text = reader.read(section, "kind", "missing", _as_str, base.kind.value)
    try:
        kind = MissingKind(kind_text.lower())
    except ValueError:
        reader.error("missing.kind", "kind must be one of none, rm, rbm")
        kind = base.kind
    cfg = MissingConfig(
        kind=kind,
        p=reader.read(section, "p", "missing", _as_float, base.p),
        p_blk=reader.read(section, "p_blk", "missing", _as_float, base.p_blk),
        l_min=reader.read(section, "l_min", "missing", _as_int, base.l_min),
        l_max=reader.read(section, "l_max", "missing", _as_int, base.l_max),
    )
    reader.check(0.0 <= cfg.p < 1.0, "missing.p", "p must be in [0,1)")
    reader.check(0.0 <= cfg.p_blk < 1.0, "missing.p_blk", "p_blk must be in [0,1)")
    reader.check(cfg.l_min >= 1, "missing.l_min", "l_min must be at least 1")
    reader.check(cfg.l_max >= cfg.l_min, "missing.l_max", "l_max must be >= l_min")
    return cfg


def _read_model(reader: _Reader, raw: dict[str, Any]) -> ModelConfig:
    section = reader.section(raw, "model", ("hidden_dim", "n_layers", "use_reset_gate"))
    base = ModelConfig()
    cfg = ModelConfig(
        hidden_dim=reader.read(section, "hidden_dim", "model", _as_int, base.hidden_dim),
        n_layers=reader.read(section, "n_layers", "model", _as_int, base.n_layers),
        use_reset_gate=reader.read(
            section, "use_reset_gate", "model", _as_bool, base.use_reset_gate
        ),
    )
    reader.check(cfg.hidden_dim >= 1, "model.hidden_dim", "hidden_dim must be at least 1")
    reader.check(cfg.n_layers >= 1, "model.n_layers", "n_layers must be at least 1")
    return cfg


def _read_gumbel(reader: _Reader, raw: dict[str, Any]) -> GumbelSchedule:
    prefix = "train.gumbel"
    section = reader.read(raw, "gumbel", "train", _as_dict, {})
    reader.reject_unknown(section, prefix, ("start", "end", "decay_epochs"))
    base = GumbelSchedule()
    cfg = GumbelSchedule(
        start=reader.read(section, "start", prefix, _as_float, base.start),
        end=reader.read(section, "end", prefix, _as_float, base.end),
        decay_epochs=reader.read(section, "decay_epochs", prefix, _as_optional_int, None),
    )
    reader.check(cfg.end > 0, f"{prefix}.end", "end must be positive")
    reader.check(cfg.start >= cfg.end, f"{prefix}.start", "start must be >= end")
    reader.check(
        cfg.decay_epochs is None or cfg.decay_epochs >= 1,
        f"{prefix}.decay_epochs",
        "decay_epochs must be at least 1",
    )
    return cfg


_TRAIN_KEYS = (
    "epochs",
    "split_period",
    "initial_groups",
    "use_c2fd",
    "lambda_sparsity",
    "learning_rate_theta",
    "learning_rate_phi",
    "batch",
    "window_width",
    "tau_max",
    "gumbel",
    "imputation_momentum",
    "checkpoint_every",
    "log_every",
)


def _read_train(reader: _Reader, raw: dict[str, Any]) -> TrainConfig:
    section = reader.section(raw, "train", _TRAIN_KEYS)
    base = TrainConfig()

    def read(key: str, convert: Callable[[Any, str], T], default: T) -> T:
        return reader.read(section, key, "train", convert, default)

    cfg = TrainConfig(
        epochs=read("epochs", _as_int, base.epochs),
        split_period=read("split_period", _as_int, base.split_period),
        initial_groups=read("initial_groups", _as_optional_int, base.initial_groups),
        use_c2fd=read("use_c2fd", _as_bool, base.use_c2fd),
        lambda_sparsity=read("lambda_sparsity", _as_float, base.lambda_sparsity),
        learning_rate_theta=read("learning_rate_theta", _as_float, base.learning_rate_theta),
        learning_rate_phi=read("learning_rate_phi", _as_float, base.learning_rate_phi),
        batch=read("batch", _as_int, base.batch),
        window_width=read("window_width", _as_optional_int, base.window_width),
        tau_max=read("tau_max", _as_int, base.tau_max),
        gumbel=_read_gumbel(reader, section),
        imputation_momentum=read("imputation_momentum", _as_float, base.imputation_momentum),
        checkpoint_every=read("checkpoint_every", _as_int, base.checkpoint_every),
        log_every=read("log_every", _as_int, base.log_every),
    )
    reader.check(cfg.epochs >= 1, "train.epochs", "epochs must be at least 1")
    reader.check(cfg.split_period >= 1, "train.split_period", "split_period must be at least 1")
    reader.check(
        cfg.initial_groups is None or cfg.initial_groups >= 1,
        "train.initial_groups",
        "initial_groups must be at least 1",
    )
    reader.check(cfg.lambda_sparsity >= 0, "train.lambda_sparsity", "lambda_sparsity must be >= 0")
    reader.check(
        cfg.learning_rate_theta > 0,
        "train.learning_rate_theta",
        "learning_rate_theta must be positive",
    )
    reader.check(
        cfg.learning_rate_phi > 0, "train.learning_rate_phi", "learning_rate_phi must be positive"
    )
    reader.check(cfg.batch >= 1, "train.batch", "batch must be at least 1")
    reader.check(cfg.tau_max >= 1, "train.tau_max", "tau_max must be at least 1")
    reader.check(
        cfg.window_width is None or cfg.window_width >= 2,
        "train.window_width",
        "window_width must be at least 2",
    )
    reader.check(
        0.0 <= cfg.imputation_momentum <= 1.0,
        "train.imputation_momentum",
        "imputation_momentum must be in [0,1]",
    )
    reader.check(cfg.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0")
    reader.check(cfg.log_every >= 1, "train.log_every", "log_every must be at least 1")
    return cfg


def _read_eval(reader: _Reader, raw: dict[str, Any]) -> EvalConfig:
    section = reader.section(raw, "eval", ("exclude_diagonal", "heatmap"))
    base = EvalConfig()
    return EvalConfig(
        exclude_diagonal=reader.read(
            section, "exclude_diagonal", "eval", _as_bool, base.exclude_diagonal
        ),
        heatmap=reader.read(section, "heatmap", "eval", _as_bool, base.heatmap),
    )


def _read_logging(reader: _Reader, raw: dict[str, Any]) -> LoggingConfig:
    section = reader.section(raw, "logging", ("level", "json"))
    level = reader.read(section, "level", "logging", _as_str, "INFO").upper()
    reader.check(level in LOG_LEVELS, "logging.level", f"level must be one of {LOG_LEVELS}")
    return LoggingConfig(
        level=level,
        json=reader.read(section, "json", "logging", _as_bool, True),
    )


def _check_cross_fields(reader: _Reader, cfg: RunConfig) -> None:
    data = cfg.data
    if not isinstance(data, VarConfig | Lorenz96Config):
        return
    groups = cfg.train.initial_groups
    if cfg.train.use_c2fd and groups is not None and groups > data.n_series:
        reader.error(
            "train.initial_groups",
            f"initial_groups {groups} exceeds n_series {data.n_series}",
        )
    if data.length <= cfg.train.history:
        reader.error(
            "train.window_width",
            f"window history {cfg.train.history} must be shorter than length {data.length}",
        )


def parse_config(
    raw: Any, base_dir: Path, fallback_data: DataSource | None = None
) -> tuple[RunConfig | None, list[Diagnostic]]:
    """Build a ``RunConfig`` from a decoded JSON document; relative paths use ``base_dir``.

    ``fallback_data`` stands in for an omitted ``data`` section.
    """
    reader = _Reader()
    if not isinstance(raw, dict):
        reader.error("<root>", "config file root must be an object")
        return None, reader.diagnostics
    reader.reject_unknown(raw, "", TOP_LEVEL_KEYS)

    if "seed" not in raw:
        reader.info("seed", "seed not set; using 0")
    seed = reader.read(raw, "seed", "", _as_int, 0)
    seeds = reader.read(raw, "seeds", "", _as_int_list, ())
    data = _read_data(reader, raw, base_dir, fallback_data)
    missing = _read_missing(reader, raw)
    model = _read_model(reader, raw)
    train = _read_train(reader, raw)
    evaluation = _read_eval(reader, raw)
    logging_cfg = _read_logging(reader, raw)
    if data is None:
        return None, reader.diagnostics

    cfg = RunConfig(
        data=data,
        missing=missing,
        model=model,
        train=train,
        eval=evaluation,
        seed=seed,
        seeds=seeds,
        logging=logging_cfg,
    )
    _check_cross_fields(reader, cfg)
    return cfg, reader.diagnostics


def _read_document(config_path: Path) -> Any:
    try:
        return json.loads(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file does not exist: {config_path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config file: {exc}") from exc


def validate_config(config_path: Path) -> list[Diagnostic]:
    """Every diagnostic for the file; the config is valid iff none has severity ``error``."""
    _, diagnostics = parse_config(_read_document(config_path), config_path.parent)
    return diagnostics


def has_errors(diagnostics: list[Diagnostic]) -> bool:
    return any(diagnostic.severity == "error" for diagnostic in diagnostics)


def load_config(config_path: Path, fallback_data: DataSource | None = None) -> RunConfig:
    cfg, diagnostics = parse_config(
        _read_document(config_path), config_path.parent, fallback_data
    )
    errors = [str(diagnostic) for diagnostic in diagnostics if diagnostic.severity == "error"]
    if errors or cfg is None:
        raise ConfigError("invalid config: " + "; ".join(errors))
    return cfg


def _data_to_dict(data: DataSource) -> dict[str, Any]:
    if isinstance(data, VarConfig):
        return {
            "var": {
                "n_series": data.n_series,
                "length": data.length,
                "tau_max": data.tau_max,
                "density": data.density,
                "coeff_scale": data.coeff_scale,
                "noise_sigma": data.noise_sigma,
            }
        }
    if isinstance(data, Lorenz96Config):
        return {
            "lorenz96": {
                "n_series": data.n_series,
                "length": data.length,
                "forcing": data.forcing,
                "dt": data.dt,
                "subsample": data.subsample,
                "noise_sigma": data.noise_sigma,
            }
        }
    csv: dict[str, Any] = {
        "panel": str(data.panel),
        "delimiter": data.delimiter,
        "missing_token": data.missing_token,
    }
    if data.mask is not None:
        csv["mask"] = str(data.mask)
    if data.truth is not None:
        csv["truth"] = str(data.truth)
    return {"csv": csv}


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    """A document ``load_config`` accepts; loading it and calling ``for_seed`` repeats the run."""
    train = cfg.train
    document: dict[str, Any] = {
        "seed": cfg.seed,
        "data": _data_to_dict(cfg.data),
        "missing": {
            "kind": cfg.missing.kind.value,
            "p": cfg.missing.p,
            "p_blk": cfg.missing.p_blk,
            "l_min": cfg.missing.l_min,
            "l_max": cfg.missing.l_max,
        },
        "model": {
            "hidden_dim": cfg.model.hidden_dim,
            "n_layers": cfg.model.n_layers,
            "use_reset_gate": cfg.model.use_reset_gate,
        },
        "train": {
            "epochs": train.epochs,
            "split_period": train.split_period,
            "initial_groups": train.initial_groups,
            "use_c2fd": train.use_c2fd,
            "lambda_sparsity": train.lambda_sparsity,
            "learning_rate_theta": train.learning_rate_theta,
            "learning_rate_phi": train.learning_rate_phi,
            "batch": train.batch,
            "window_width": train.window_width,
            "tau_max": train.tau_max,
            "gumbel": {
                "start": train.gumbel.start,
                "end": train.gumbel.end,
                "decay_epochs": train.gumbel.decay_epochs,
            },
            "imputation_momentum": train.imputation_momentum,
            "checkpoint_every": train.checkpoint_every,
            "log_every": train.log_every,
        },
        "eval": {"exclude_diagonal": cfg.eval.exclude_diagonal, "heatmap": cfg.eval.heatmap},
        "logging": {"level": cfg.logging.level, "json": cfg.logging.json},
    }
    if cfg.seeds:
        document["seeds"] = list(cfg.seeds)
    return document
