"""Exception hierarchy.

Each family carries the process exit code the CLI maps it to.
"""


class IVCoxError(Exception):
    exit_code = 4


class ConfigError(IVCoxError):
    exit_code = 2


class DataError(IVCoxError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    pass


class EmptyFile(DataError):
    pass


class EmptyCell(DataError):
    pass


class InsufficientData(DataError):
    pass


class NumericalError(IVCoxError):
    exit_code = 4


class ZeroMass(NumericalError):
    pass


class Saturated(NumericalError):
    def __init__(self, level, message=None):
        super().__init__(message or f"pseudo-inverse saturated at level {level}")
        self.level = level


class NoConvergence(NumericalError):
    pass


class Collinear(NumericalError):
    pass


class NoEvents(NumericalError):
    pass


class SaturationBudgetExceeded(NumericalError):
    pass


class DegenerateSd(NumericalError):
    pass


class FailureBudget(NumericalError):
    pass
