"""Exception types shared across the package."""


class StripeCleanError(Exception):
    """Base class for all package errors."""


class DimensionError(StripeCleanError, ValueError):
    """Tensor extents incompatible with an operation."""


class ConfigError(StripeCleanError, ValueError):
    """Invalid configuration or parameter value."""


class ContractError(StripeCleanError, RuntimeError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class CheckpointError(StripeCleanError, IOError):
    """Malformed, truncated or mismatched checkpoint / tensor file."""


class TrainingAborted(StripeCleanError, RuntimeError):
    """Training stopped because the loss became non-finite."""
