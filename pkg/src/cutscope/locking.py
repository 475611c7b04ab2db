from __future__ import annotations

import fcntl
import os
from pathlib import Path
from typing import TextIO

LOCK_FILE_NAME = ".cuts-scope.lock"


class LockError(RuntimeError):
    pass


class OutputDirLock:
    """Exclusive non-blocking lock on ``<out_dir>/.cuts-scope.lock``."""

    def __init__(self, out_dir: Path) -> None:
        self._lock_path = out_dir / LOCK_FILE_NAME
        self._handle: TextIO | None = None

    @property
    def path(self) -> Path:
        return self._lock_path

    def __enter__(self) -> OutputDirLock:
        self._lock_path.parent.mkdir(parents=True, exist_ok=True)
        handle = self._lock_path.open("a+", encoding="utf-8")
        try:
            fcntl.flock(handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            handle.close()
            raise LockError(f"output directory is in use: {self._lock_path.parent}") from exc
        handle.seek(0)
        handle.truncate()
        handle.write(f"{os.getpid()}\n")
        handle.flush()
        self._handle = handle
        return self

    def __exit__(self, exc_type: object, exc: object, tb: object) -> None:
        if self._handle is None:
            return
        fcntl.flock(self._handle.fileno(), fcntl.LOCK_UN)
        self._handle.close()
        self._handle = None
