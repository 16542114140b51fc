"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; the CLI maps all of them to exit code 2.
"""


class SaeError(Exception):
    """Base class for package errors."""


class ConfigurationError(SaeError):
    """Invalid configuration: bad shapes, bad flag values, impossible layer chains."""


class DataFormatError(SaeError):
    """A dataset file is malformed: bad magic, truncation, count mismatch, out-of-range values."""


class ModelFormatError(SaeError):
    """A serialized model is malformed."""


class FormatVersionError(ModelFormatError):
    """Manifest format_version is not supported."""


class UnknownLayerError(ModelFormatError):
    """Manifest names a layer kind the engine does not implement."""


class UnsupportedDtypeError(ModelFormatError):
    """Manifest names a parameter dtype the engine does not implement."""


class BlobLengthError(ModelFormatError):
    """Weight blob byte length does not match the manifest's layer chain."""


class TrainingError(SaeError):
    """Training failed; carries the epoch where the failure occurred."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class OracleError(SaeError):
    """A black-box oracle callback raised; the calling round leaves its dataset unchanged."""


class EvaluationError(SaeError):
    """An evaluation run cannot proceed (for example, no correctly classified samples)."""
