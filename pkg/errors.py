"""
Exception hierarchy shared by the numerical modules and the CLI
"""
from typing import Any, Dict

EXIT_COMPUTATION = 1
EXIT_USAGE = 2


class WeylError(Exception):
    """Base class; carries the CLI exit code and a JSON error record"""

    exit_code = EXIT_COMPUTATION

    def to_record(self) -> Dict[str, Any]:
        return {
            "success": False,
            "error": type(self).__name__,
            "message": str(self),
        }


# Dense kernel
class SingularMatrix(WeylError):
    pass


class NonConvergence(WeylError):
    pass


# Matrix equations
class SpectraOverlap(WeylError):
    pass


class SpectraOnContour(WeylError):
    pass


class SpectraMisplaced(WeylError):
    pass


class NotAccretive(WeylError):
    pass


class ContractionViolated(WeylError):
    pass


class IterationBudgetExceeded(WeylError):
    pass


class NotASolution(WeylError):
    pass


# Lattice theory
class RealAxis(WeylError):
    pass


class InsufficientDecades(WeylError):
    pass


class NotPositiveDefinite(WeylError):
    pass


class DegenerateMeasure(WeylError):
    pass


class WindowTooSmall(WeylError):
    pass


class NoDecay(WeylError):
    pass


class ConsistencyError(WeylError):
    """Two computations of the same quantity disagree beyond tolerance"""


# Continuum theory
class StepFailure(WeylError):
    pass


class SeparationFailed(WeylError):
    pass


# Input errors
class ParseError(WeylError):
    exit_code = EXIT_USAGE


class ValidationError(WeylError):
    exit_code = EXIT_USAGE


class UsageError(WeylError):
    exit_code = EXIT_USAGE
