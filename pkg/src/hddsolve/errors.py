"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (out-of-range level, missing file, ...)."""


class GeometryError(ValueError):
    """Region is not aligned with the mesh grid or is degenerate."""


class UsageError(RuntimeError):
    """An operation was called on an object that does not support it."""


class NumericalError(RuntimeError):
    """A factorization or solve failed; carries the offending tree node."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id
