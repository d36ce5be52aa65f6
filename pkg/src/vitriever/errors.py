"""Exception hierarchy shared across the package."""


class VitrieverError(Exception):
    """Base class for all errors raised by this package."""


class StoreFormatError(VitrieverError):
    """A descriptor store file is malformed (bad magic, version, truncation, ...)."""


class ValidationError(VitrieverError):
    """Input data violates an invariant (non-finite values, duplicate ids, ...)."""


class DimensionMismatchError(ValidationError):
    """Vector or matrix dimensions do not agree."""


class MetricError(VitrieverError):
    """A distance cannot be computed for the given operands."""


class GroundTruthError(VitrieverError):
    """Ground-truth data is missing, malformed, or inconsistent with the store."""
