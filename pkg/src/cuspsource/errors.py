"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CuspSourceError(Exception):
    """Base class for library errors."""


class InvalidParameterError(CuspSourceError, ValueError):
    pass


class DegenerateGeometryError(CuspSourceError, ValueError):
    """Coincident points, collinear detectors and other singular layouts."""


class DomainError(CuspSourceError, ValueError):
    """An argument lies outside the region where a quantity is defined."""


class ConfigurationError(CuspSourceError, ValueError):
    pass


class NumericalConditioningError(CuspSourceError, ArithmeticError):
    def __init__(self, message: str, detector_index: int | None = None):
        super().__init__(message)
        self.detector_index = detector_index


class ScenarioValidationError(CuspSourceError, ValueError):
    """Raised when an operation needs a scenario satisfying C1-C5 and it does not."""

    def __init__(self, report):
        failed = ", ".join(c.name for c in report.conditions if not c.passed)
        super().__init__(f"scenario fails conditions: {failed}")
        self.report = report
