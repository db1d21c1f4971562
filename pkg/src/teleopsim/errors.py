"""Package-wide exception types, mapped to CLI exit codes."""


class TeleopsimError(Exception):
    """Base class for package errors."""


class ConfigurationError(TeleopsimError):
    """Invalid or missing configuration; CLI exit code 1."""


class RuntimeAbort(TeleopsimError):
    """Safety or numerical abort at runtime; CLI exit code 2."""


class TrainingDiverged(RuntimeAbort):
    """NaN loss during training; carries the path of the diagnostic dump."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class EpisodeParseError(TeleopsimError):
    """Corrupt or version-mismatched episode file; names the record index."""

    def __init__(self, message: str, record_index=None):
        super().__init__(message)
        self.record_index = record_index
