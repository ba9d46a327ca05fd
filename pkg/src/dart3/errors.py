"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class Dart3Error(Exception):
    exit_code = 1


class UsageError(Dart3Error):
    exit_code = 2


class StorageError(Dart3Error, OSError):
    exit_code = 3


class FormatError(Dart3Error, ValueError):
    """Malformed array file or manifest."""

    exit_code = 4


class ConsistencyError(Dart3Error, ValueError):
    """Array and manifest (or two inputs) disagree."""

    exit_code = 4


class DataError(Dart3Error, ValueError):
    exit_code = 4


class ConfigurationError(Dart3Error, ValueError):
    exit_code = 4


class LabelingError(Dart3Error, ValueError):
    """Evaluation needs person IDs that are missing (pid == -1)."""

    exit_code = 4


class NumericError(Dart3Error, ArithmeticError):
    exit_code = 5
