from __future__ import annotations

import json
import logging
import os
import time
import uuid
from contextlib import contextmanager
from typing import Any, Iterator

from nvsim.errors import NVSimError
from nvsim.settings import get_settings

ROOT_LOGGER = "nvsim"


def _configure(logger: logging.Logger) -> None:
    settings = get_settings()
    logger.setLevel((settings.log_level or "INFO").upper())
    sh = logging.StreamHandler()
    sh.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(sh)
    if settings.log_file:
        os.makedirs(os.path.dirname(settings.log_file) or ".", exist_ok=True)
        fh = logging.FileHandler(settings.log_file)
        fh.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(fh)
    logger.propagate = False


def get_logger(name: str = "") -> logging.Logger:
    root = logging.getLogger(ROOT_LOGGER)
    if not root.handlers:
        _configure(root)
    return root.getChild(name) if name else root


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    return value if isinstance(value, (str, int, float, bool, type(None), list, dict)) else str(value)


def log_event(logger: logging.Logger, event: str, level: int = logging.INFO, **fields: Any) -> None:
    """Emit one JSON line: {ts, event, logger, **fields}."""
    if not logger.isEnabledFor(level):
        return
    record = {"ts": int(time.time() * 1000), "event": event, "logger": logger.name}
    record.update({k: _jsonable(v) for k, v in fields.items()})
    logger.log(level, json.dumps(record, ensure_ascii=False, default=str))


@contextmanager
def audited(command: str, **params: Any) -> Iterator[dict]:
    """
    Wraps one CLI command:
    - assigns a run_id
    - logs a JSON line {ts, run_id, command, params, status, exit_code, duration_ms}
    Callers may set `ctx["exit_code"]` and extra keys on the yielded dict.
    """
    logger = get_logger("audit")
    ctx: dict = {"run_id": str(uuid.uuid4()), "exit_code": 0}
    start = time.time()
    try:
        yield ctx
    except Exception as e:
        log_event(
            logger,
            "command",
            level=logging.ERROR,
            run_id=ctx["run_id"],
            command=command,
            params=params,
            status="error",
            exit_code=2 if isinstance(e, NVSimError) else 1,
            duration_ms=round((time.time() - start) * 1000, 2),
            error=str(e),
        )
        raise
    extra = {k: v for k, v in ctx.items() if k not in ("run_id", "exit_code")}
    log_event(
        logger,
        "command",
        run_id=ctx["run_id"],
        command=command,
        params=params,
        status="ok" if ctx["exit_code"] == 0 else "error",
        exit_code=ctx["exit_code"],
        duration_ms=round((time.time() - start) * 1000, 2),
        **extra,
    )
