"""Shared error types mapped to CLI exit codes."""


class ConfigError(Exception):
    """Bad configuration or usage (exit code 1)."""
    exit_code = 1


class DataError(Exception):
    """Invalid or inconsistent data (exit code 2)."""
    exit_code = 2


class TransportError(Exception):
    """Network/transport failure after retries (exit code 3)."""
    exit_code = 3


class ParseError(DataError):
    """A record could not be parsed."""
