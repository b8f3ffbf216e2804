"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Input array has the wrong shape for the operation."""


class ValidationError(ValueError):
    """Input values violate a documented invariant."""


class FormatError(ValueError):
    """On-disk artifact does not match its declared format."""


class StratificationError(ValueError):
    """A class-stratified operation received a class with no members."""


class StateError(RuntimeError):
    """Operation invoked on an object in an unusable state."""
