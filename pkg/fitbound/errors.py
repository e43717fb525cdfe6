from typing import Optional


class FitboundError(Exception):
    """Base class for every failure raised by the library.

    ``exit_code`` is what the command line reports when the error escapes a
    command: 2 for bad input or configuration, 1 for numerical or contract
    failures.
    """

    exit_code = 1


class InvalidInputError(FitboundError, ValueError):
    """Raised when a value violates its documented domain."""

    exit_code = 2


class DimensionError(FitboundError, ValueError):
    """Raised when two objects that must share a shape do not."""

    exit_code = 2


class ConfigurationError(FitboundError):
    """Raised when a configuration file or combination of options is unusable."""

    exit_code = 2


class DomainError(FitboundError, ValueError):
    """Raised when a feature vector lies outside a distribution's support."""

    exit_code = 2


class NumericError(FitboundError, ArithmeticError):
    """Raised when a computation produces non-finite values or fails to converge."""


class DegenerateModelError(FitboundError):
    """Raised when a quantity would divide by an identically zero norm."""


class UndefinedCorrelationError(FitboundError):
    """Raised when a correlation is requested for a constant sequence."""


class DataGenerationError(FitboundError):
    """Raised when synthetic data cannot be generated with every class present."""


class ContractViolation(FitboundError):
    """Raised when a verification contract does not hold."""


class TrainingDivergedError(FitboundError):
    """Raised when the training loss stops being finite.

    ``run`` holds the records collected before divergence so callers can still
    persist them.
    """

    def __init__(self, message: str, run: Optional[object] = None):
        super().__init__(message)
        self.run = run
