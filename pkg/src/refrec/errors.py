"""Exception types shared across the package."""


class RefrecError(Exception):
    """Base class for package-specific failures."""


class ConfigError(RefrecError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(RefrecError, ValueError):
    """Tensor extents incompatible with the requested operation."""


class MaskError(RefrecError, ValueError):
    """Attention mask violates its row-visibility contract."""


class DataError(RefrecError):
    """Dataset-level problem: missing files, bad records, wrong splits."""


class ParseError(DataError):
    """Malformed binary file; `offset` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MetricUndefinedError(DataError):
    """Metric requested on inputs where it has no defined value."""


class CheckpointError(DataError):
    """Checkpoint file unreadable or inconsistent with the active config."""


class NumericError(RefrecError, RuntimeError):
    """Non-finite values where finite ones are required."""
