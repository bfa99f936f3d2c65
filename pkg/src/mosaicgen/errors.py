"""Exception hierarchy shared across the pipeline.

Every error that maps to a CLI exit code derives from one of the three
top-level branches below: ConfigError (exit 2), BackendFailure (exit 3),
IoFailure and file-format errors (exit 4).
"""


class MosaicError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(MosaicError):
    """Invalid configuration. Carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class BackendFailure(MosaicError):
    """A generation backend failed. Carries the backend id and cause."""

    def __init__(self, backend_id: str, message: str, cause: Exception | None = None):
        self.backend_id = backend_id
        self.cause = cause
        super().__init__(f"backend '{backend_id}': {message}")


class IoFailure(MosaicError):
    """Filesystem or file-format failure (exit code 4)."""


class FormatError(IoFailure):
    """Base for parse/codec errors in the file formats we read and write."""
