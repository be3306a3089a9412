from __future__ import annotations
import json
import logging
import os
import sys
from contextlib import contextmanager
from typing import Iterator, Optional

# record attributes the solver attaches through ``extra=``; JSON output carries them when set
STAGE_FIELDS = ("stage", "seed", "constant")
NO_STAGE = "-"
_TEXT_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | stage=%(stage)s | %(message)s"

# stages run one after another; solver worker threads read the same value
_current_stage: str = NO_STAGE


@contextmanager
def log_stage(name: str) -> Iterator[None]:
    """Tag every record emitted inside the block with ``stage=name``."""
    global _current_stage
    previous, _current_stage = _current_stage, name
    try:
        yield
    finally:
        _current_stage = previous


def current_stage() -> str:
    return _current_stage


class StageFilter(logging.Filter):
    """Fills ``record.stage`` from the active :func:`log_stage` block unless the call passed one."""

    def filter(self, record: logging.LogRecord) -> bool:
        if getattr(record, "stage", None) is None:
            record.stage = _current_stage
        return True


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "level": record.levelname,
            "name": record.name,
            "msg": record.getMessage(),
            "time": self.formatTime(record, datefmt="%Y-%m-%dT%H:%M:%S"),
            "pid": record.process,
        }
        for key in STAGE_FIELDS:
            value = getattr(record, key, None)
            if value is not None and value != NO_STAGE:
                payload[key] = value
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False, default=str)


def setup_logging(level: Optional[str] = None, json_mode: Optional[bool] = None) -> None:
    level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    json_mode = json_mode if json_mode is not None else (os.getenv("LOG_JSON", "false").lower() in ("1", "true", "yes", "y"))
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    root.setLevel(getattr(logging, level, logging.INFO))
    handler = logging.StreamHandler(sys.stdout)
    handler.addFilter(StageFilter())
    handler.setFormatter(JsonFormatter() if json_mode else logging.Formatter(_TEXT_FORMAT, "%H:%M:%S"))
    root.addHandler(handler)
    # plotting libraries are chatty at DEBUG
    for noisy in ("matplotlib", "PIL"):
        logging.getLogger(noisy).setLevel(max(logging.WARNING, root.level))
