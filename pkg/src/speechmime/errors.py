"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class SpeechMimeError(Exception):
    """Base class for all package errors."""


class ConfigError(SpeechMimeError):
    """Invalid configuration: unknown keys, bad values, failed preconditions."""


class DataError(SpeechMimeError):
    """Malformed or missing data: files, manifests, caches, checkpoints."""


class VersionError(DataError):
    """A file carries a format_version this build does not understand."""


class CorruptCheckpointError(DataError):
    """Checkpoint payload does not match its recorded checksum."""


class NumericError(SpeechMimeError):
    """Non-finite values encountered where finite math was required."""


class SealedModelError(SpeechMimeError):
    """Attempt to obtain writable parameters from a sealed model."""


class ContextOverflowError(SpeechMimeError):
    """Sequence longer than the model context window."""
