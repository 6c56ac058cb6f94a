"""Exception types shared across the package."""


class MtdMetaError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(MtdMetaError):
    """Invalid input data (malformed CSV, impossible counts, bad arguments)."""


class StructuralDataError(ValidationError):
    """Dataset cannot support the requested model (e.g. fewer than 2 doses)."""


class NumericalError(MtdMetaError):
    """A computation is undefined or failed (zero slope, improper posterior)."""


class ImproperPosteriorError(NumericalError):
    """The requested prior yields an improper posterior for the given data."""
