"""
Exception types shared by every module.
"""


class DMambaError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(DMambaError, ValueError):
    """Incompatible tensor shapes or invalid axes."""


class ConfigError(DMambaError, ValueError):
    """Invalid run configuration. Carries every offending key."""

    def __init__(self, message, keys=None):
        super().__init__(message)
        self.keys = list(keys or [])


class DatasetError(DMambaError):
    """Unreadable, empty or inconsistent offline dataset."""


class CheckpointError(DMambaError):
    """Checkpoint file that cannot be read or does not fit the network."""


class EnvError(DMambaError):
    """Invalid environment parameters or contract violations (step after done)."""


class TrainingError(DMambaError):
    """Loss or optimizer failure during training."""


class NumericalError(DMambaError, ValueError):
    """Out-of-domain values inside the network, such as a non-positive step size."""
