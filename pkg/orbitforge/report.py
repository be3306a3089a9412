from __future__ import annotations
import json, os, time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

from . import __version__
from .config import REPORT_SCHEMA
from .utils import to_jsonable


@dataclass
class RunReport:
    """Self-describing record of one CLI run: config echo, stage outcomes, results, timings."""
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    workers: int = 1
    stages: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    created_at: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    exit_code: int = 0

    def mark(self, stage: str, passed: bool, **details: Any) -> None:
        self.stages[stage] = {"passed": bool(passed), **details}

    def fail(self, stage: str, error: BaseException) -> None:
        self.mark(stage, False, error=type(error).__name__, message=str(error),
                  exit_code=getattr(error, "exit_code", 1))

    @property
    def passed(self) -> bool:
        return all(s["passed"] for s in self.stages.values())

    def to_dict(self, normalized: bool = False) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "schema": REPORT_SCHEMA,
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "workers": self.workers,
            "stages": self.stages,
            "results": self.results,
            "passed": self.passed,
            "exit_code": self.exit_code,
        }
        if not normalized:
            out["timings"] = self.timings
            out["created_at"] = self.created_at
        return to_jsonable(out)


def save_report(path: Union[str, Path], report: RunReport, normalized: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(normalized), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    os.replace(tmp, path)
    return path


def load_report(path: Union[str, Path]) -> Optional[Dict[str, Any]]:
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
