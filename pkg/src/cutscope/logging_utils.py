from __future__ import annotations

import json
import logging
import os
import sys
from datetime import UTC, datetime

import numpy as np

from cutscope.config import LOG_LEVELS, ConfigError

LOG_LEVEL_ENV = "CUTS_SCOPE_LOG_LEVEL"

_RECORD_ATTRIBUTES = frozenset(
    {
        "name",
        "msg",
        "args",
        "levelname",
        "levelno",
        "pathname",
        "filename",
        "module",
        "exc_info",
        "exc_text",
        "stack_info",
        "lineno",
        "funcName",
        "created",
        "msecs",
        "relativeCreated",
        "thread",
        "threadName",
        "processName",
        "process",
        "taskName",
    }
)


def _plain(value: object) -> object:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, object] = {
            "timestamp": datetime.fromtimestamp(record.created, tz=UTC).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info is not None:
            payload["exception"] = self.formatException(record.exc_info)
        for key, value in record.__dict__.items():
            if key.startswith("_") or key in _RECORD_ATTRIBUTES:
                continue
            payload[key] = _plain(value)
        return json.dumps(payload, separators=(",", ":"), sort_keys=True, default=str)


def resolve_level(configured: str) -> str:
    override = os.getenv(LOG_LEVEL_ENV)
    level = (override if override else configured).strip().upper()
    if level not in LOG_LEVELS:
        source = LOG_LEVEL_ENV if override else "logging.level"
        raise ConfigError(f"{source}: level must be one of {LOG_LEVELS}, got {level!r}")
    return level


def configure_logging(level: str, use_json: bool) -> None:
    """Log to stderr so stdout stays free for command output."""
    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.setLevel(resolve_level(level))
    handler = logging.StreamHandler(sys.stderr)
    if use_json:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    root_logger.addHandler(handler)
