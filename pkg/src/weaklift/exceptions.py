"""Exception hierarchy shared across the package."""


class WeakliftError(Exception):
    """Base class for all package errors."""


class FrameError(WeakliftError, ValueError):
    """A pose was passed in a coordinate frame the operation does not accept."""


class TopologyError(WeakliftError, ValueError):
    """Invalid skeleton description, or a pose/file that does not match one."""


class PoseFileError(WeakliftError, ValueError):
    """Malformed pose file. ``record`` is the 0-based record index when known."""

    def __init__(self, message, record=None, version=None):
        if record is not None:
            message = f"record {record}: {message}"
        if version is not None:
            message = f"{message} (pose-file format v{version})"
        super().__init__(message)
        self.record = record
        self.version = version


class CheckpointError(WeakliftError, ValueError):
    """Corrupt, truncated or version-incompatible checkpoint."""


class NumericalError(WeakliftError, FloatingPointError):
    """Non-finite values showed up in inputs, gradients or losses."""
