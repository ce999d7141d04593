# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).


class HomogenizationError(Exception):
    pass


class ValidationError(HomogenizationError):
    pass


class GeometryError(ValidationError):
    pass


class CoefficientError(ValidationError):
    pass


class IonicModelError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class RegimeError(ValidationError):
    pass


class UnstableTimeStep(ValidationError):
    pass


class ConfigError(ValidationError):
    """All schema problems of one configuration file, not just the first."""

    def __init__(self, errors, path=None):
        self.errors = list(errors)
        self.path = path
        head = "invalid configuration" + (" %s" % path if path else "")
        super().__init__("%s:\n  %s" % (head, "\n  ".join(self.errors)))


class SolverError(HomogenizationError):
    pass


class LinearSolveError(SolverError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IncompatibleDataError(SolverError):
    pass


class EnergyBlowUpError(SolverError):
    pass


class CellProblemError(SolverError):
    pass


class CacheError(HomogenizationError):
    pass
