"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with an operation or layer."""


class GraphStateError(RuntimeError):
    """A differentiation graph was used in a way its lifecycle forbids."""


class AvailabilityError(ValueError):
    """A view needed by a fusion path is missing (or no view is available)."""


class ConfigError(ValueError):
    """Invalid configuration: unknown views, bad method pairing, bad fields."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""
