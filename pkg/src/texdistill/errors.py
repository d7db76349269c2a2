"""Exception taxonomy mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (exit code 2)."""


class AssetError(Exception):
    """Broken or unsupported mesh/image/texture file (exit code 3)."""


class ScorerError(Exception):
    """Score-model or wire-protocol failure (exit code 4)."""

    def __init__(self, message, retryable=False):
        super().__init__(message)
        self.retryable = retryable


class NumericalError(Exception):
    """Non-finite values or failed numerical checks (exit code 5)."""
