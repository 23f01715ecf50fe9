"""Exception types shared across the package."""


class HscfError(Exception):
    """Base class for all package errors."""


class ValidationError(HscfError):
    """Input data, configuration, or file contents failed validation."""


class ShapeError(ValidationError):
    """Operand or parameter dimensions are incompatible."""
