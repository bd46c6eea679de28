"""Exception hierarchy shared across the package."""


class DetnetMimoError(Exception):
    """Base class for all package errors."""


class ShapeError(DetnetMimoError):
    """Operands have incompatible or invalid dimensions."""


class SingularityError(DetnetMimoError):
    """A matrix that must be (positive) definite is numerically singular."""


class CapacityError(DetnetMimoError):
    """Problem size exceeds a hard guard (e.g. exhaustive search width)."""


class ParameterError(DetnetMimoError):
    """A numeric parameter is outside its permitted range."""


class ConfigError(DetnetMimoError):
    """Invalid experiment configuration; message carries the field path."""


class CheckpointError(DetnetMimoError):
    """Checkpoint file malformed or incompatible with the requested layout."""


class TrainingError(DetnetMimoError):
    """Training aborted (non-finite loss/gradient).  May carry a report."""

    def __init__(self, message, layer=None, report=None):
        super().__init__(message)
        self.layer = layer
        self.report = report
