"""Exception hierarchy shared by every pclr module."""


class PclrError(Exception):
    """Base class for all library errors."""


class DimensionError(PclrError, ValueError):
    """A tensor shape does not conform to an operation's contract."""


class ConfigError(PclrError, ValueError):
    """A configuration value is out of range or inconsistent."""


class StateError(PclrError, RuntimeError):
    """An operation was invoked in the wrong lifecycle state."""


class DataError(PclrError, ValueError):
    """Input data is missing, malformed or unusable."""


class NumericDegeneracyError(PclrError, ArithmeticError):
    """A computation hit a degenerate value (e.g. a zero-norm vector)."""


class CheckpointError(PclrError):
    """Base class for checkpoint load failures."""


class PayloadLengthError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class ManifestError(DataError):
    """A manifest file failed validation; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(ManifestError):
    pass


class MissingFileError(ManifestError):
    pass


class MalformedRowError(ManifestError):
    pass
