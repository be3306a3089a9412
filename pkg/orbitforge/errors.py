"""Exception hierarchy. Every error carries the CLI exit code it maps to."""
from __future__ import annotations
from typing import Any, Optional

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


class OrbitForgeError(Exception):
    exit_code: int = 1
    stage: Optional[str] = None

    def __init__(self, message: str = "", *, stage: Optional[str] = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


# ---- configuration ----
class ConfigError(OrbitForgeError, ValueError):
    exit_code = EXIT_CONFIG
    stage = "config"


class InvalidGrid(ConfigError):
    pass


class GridTooSmall(ConfigError):
    pass


# ---- curve algebra ----
class GridMismatch(OrbitForgeError, ValueError):
    exit_code = EXIT_CONFIG


class WellMismatch(OrbitForgeError, ValueError):
    exit_code = EXIT_CONFIG


class NoSignChange(OrbitForgeError, ValueError):
    exit_code = EXIT_CONFIG
    stage = "symmetrize"


class NotSymmetric(OrbitForgeError, ValueError):
    exit_code = EXIT_CONFIG
    stage = "fold"


# ---- assumption evidence ----
class NegativeValue(OrbitForgeError, ValueError):
    exit_code = EXIT_ASSUMPTION
    stage = "potential"


class SpecViolation(OrbitForgeError):
    """Raised when a declared well fails V=0 or positive-definiteness.

    The partial reports computed before the failure travel with the error
    so they can still be written to the run report.
    """
    exit_code = EXIT_ASSUMPTION
    stage = "verify"

    def __init__(self, message: str = "", *, reports: Any = None, stage: Optional[str] = None):
        super().__init__(message, stage=stage)
        self.reports = reports


class GapNotDetected(OrbitForgeError):
    exit_code = EXIT_ASSUMPTION
    stage = "gap"

    def __init__(self, message: str = "", *, report: Any = None):
        super().__init__(message)
        self.report = report


# ---- solvers ----
class NonConvergence(OrbitForgeError):
    exit_code = EXIT_SOLVER

    def __init__(self, message: str = "", *, result: Any = None, stage: Optional[str] = None):
        super().__init__(message, stage=stage)
        self.result = result


class AllSeedsFailed(OrbitForgeError):
    exit_code = EXIT_SOLVER
    stage = "multistart"


class DriftedToMinimizer(NonConvergence):
    stage = "refine_saddle"

    def __init__(self, message: str = "", *, result: Any = None, distance: float = float("nan")):
        super().__init__(message, result=result)
        self.distance = distance


class Inconsistent(OrbitForgeError):
    exit_code = EXIT_SOLVER
    stage = "classify"


class Unclassified(OrbitForgeError):
    exit_code = EXIT_SOLVER
    stage = "classify_sym"
