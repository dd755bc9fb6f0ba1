"""Exception hierarchy shared by every module."""


class MixBayesError(Exception):
    """Base class for all package errors."""


class UsageError(MixBayesError, ValueError):
    """Called with arguments that make no sense (empty input, zero draws, ...)."""


class ValidationError(MixBayesError, ValueError):
    """Parameters, priors or data violate a stated invariant."""


class DataError(ValidationError):
    """An input file could not be parsed into a valid dataset."""


class UnsupportedFamilyError(MixBayesError, NotImplementedError):
    """The requested operation is not defined for this component family."""


class ResourceLimitError(MixBayesError, MemoryError):
    """An enumeration grew past its configured entry cap."""

    def __init__(self, cap, message=None):
        self.cap = cap
        super().__init__(message or f"statistic table exceeded the entry cap of {cap}")


class NumericalError(MixBayesError, ArithmeticError):
    """A computation produced no usable finite value."""
