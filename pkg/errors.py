"""Exception hierarchy shared by every layer of the laboratory.

Each error carries a ``category`` that the CLI maps to an exit code:
``config`` -> 2, ``solver`` -> 3, ``acceptance`` -> 4, ``io`` -> 3.
"""
from __future__ import annotations

from typing import Optional


class HomogenizationLabError(Exception):
    category = "solver"


# ---------------- geometry ---------------- #
class InclusionTouchesBoundary(HomogenizationLabError, ValueError):
    category = "config"


class ResolutionTooCoarse(HomogenizationLabError, ValueError):
    category = "config"


class NonTilingEpsilon(HomogenizationLabError, ValueError):
    category = "config"


class PointOutsideDomain(HomogenizationLabError, ValueError):
    pass


# ---------------- assembly ---------------- #
class UnsupportedOrder(HomogenizationLabError, ValueError):
    pass


class PhaseFieldMissing(HomogenizationLabError, ValueError):
    pass


class MissingPeriodicPairs(HomogenizationLabError, ValueError):
    pass


class EmptyBoundary(HomogenizationLabError, ValueError):
    pass


class NonFiniteSample(HomogenizationLabError, ValueError):
    pass


# ---------------- solvers ---------------- #
class NotConsistent(HomogenizationLabError):
    pass


class MaxIterations(HomogenizationLabError):
    pass


class Stagnation(HomogenizationLabError):
    pass


class RankDeficientB(HomogenizationLabError):
    pass


class InnerSolveFailure(HomogenizationLabError):
    pass


class NotConverged(HomogenizationLabError):
    def __init__(self, message: str, k_found: int = 0, k_requested: int = 0):
        super().__init__(message)
        self.k_found = k_found
        self.k_requested = k_requested


# ---------------- homogenization ---------------- #
class ConsistencyViolation(HomogenizationLabError):
    pass


class CouplingSingular(HomogenizationLabError):
    pass


class IncompatibleInputs(HomogenizationLabError, ValueError):
    pass


class EmptyWindow(HomogenizationLabError, ValueError):
    pass


class AcceptanceFailure(HomogenizationLabError):
    category = "acceptance"


# ---------------- configuration / io ---------------- #
class ConfigError(HomogenizationLabError):
    category = "config"

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        location = ""
        if line is not None:
            location = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + location)
        self.message = message
        self.line = line
        self.column = column


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class InvalidValue(ConfigError):
    pass


class ReportIoError(HomogenizationLabError, OSError):
    category = "io"
