"""Exception hierarchy shared by every stage of the pipeline."""


class DetectError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DetectError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(DetectError, ValueError):
    """A precondition of an operation was violated."""


class NumericalDomainError(DetectError, ArithmeticError):
    """A value fell outside the domain of a numerical function."""


class DivergenceError(DetectError, ArithmeticError):
    """Training produced non-finite values."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class ScheduleExhaustedError(DetectError, IndexError):
    """A learning-rate schedule was queried past its last step."""


class ConfigError(DetectError, ValueError):
    """Invalid model or run configuration."""


class IngestionError(DetectError, ValueError):
    """A recording file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class PreprocessingError(DetectError, ValueError):
    """A recording cannot be trimmed or segmented."""


class SplitError(DetectError, ValueError):
    """A dataset cannot be partitioned as requested."""


class EvaluationError(DetectError, ValueError):
    """Accuracy cannot be computed (for example, on an empty set)."""


class CalibrationError(DetectError, ValueError):
    """No TES threshold can be defined for the cohort."""
