"""Exception types shared across mlrkit modules."""


class MlrkitError(Exception):
    """Base class for all mlrkit errors."""


class ShapeError(MlrkitError, ValueError):
    """Operands have incompatible shapes."""


class DegenerateInputError(MlrkitError, ValueError):
    """Input is degenerate (e.g. a zero-norm vector where a direction is required)."""


class FormatError(MlrkitError, ValueError):
    """A file does not conform to its on-disk format."""


class DomainError(MlrkitError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class UndefinedAPError(MlrkitError, ValueError):
    """Average precision is undefined (no positive labels for the class)."""


class NumericalError(MlrkitError, RuntimeError):
    """A numerical computation produced non-finite values."""


class UsageError(MlrkitError, ValueError):
    """Invalid command-line usage."""
