"""Error types mapped to CLI exit codes."""


class DataError(Exception):
    """Unreadable or inconsistent input data (CLI exit code 2)."""


class NumericError(Exception):
    """Non-finite values during training or evaluation (CLI exit code 3)."""
