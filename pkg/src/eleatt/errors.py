"""Exception types shared across the package."""


class EleattError(Exception):
    """Base class for package errors."""


class ShapeError(EleattError, ValueError):
    """Operands with incompatible shapes were passed to a numeric kernel."""


class ConfigError(EleattError, ValueError):
    """Invalid or unknown configuration key/value."""


class DataFormatError(EleattError, ValueError):
    """A data file does not follow its declared binary layout."""


class IdxMagicError(DataFormatError):
    """IDX file starts with an unexpected magic number."""


class IdxTruncatedError(DataFormatError):
    """IDX file ends before the payload announced in its header."""


class IdxCountMismatchError(DataFormatError):
    """Paired IDX image/label files disagree on the number of items."""


class CheckpointError(EleattError, ValueError):
    """A serialized parameter blob is malformed or inconsistent."""
