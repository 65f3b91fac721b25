"""Exception types shared across the package."""


class LosxferError(Exception):
    """Base class for all package errors."""


class ValidationError(LosxferError):
    """Bad inputs, configs or preconditions (CLI exit code 2)."""


class ShapeError(ValidationError):
    """Tensor dimension mismatch; message names the offending axis."""


class NonFiniteError(LosxferError):
    """NaN or infinity encountered in numeric data (CLI exit code 3)."""
