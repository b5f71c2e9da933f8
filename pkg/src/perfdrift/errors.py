"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class StateError(RuntimeError):
    """An object was used out of order (e.g. backward before forward)."""


class DegenerateDataError(ValueError):
    """Data cannot support the requested fit or evaluation."""


class FormatError(ValueError):
    """An input file does not have the expected layout."""


class ConfigError(ValueError):
    """Invalid configuration key or value."""
