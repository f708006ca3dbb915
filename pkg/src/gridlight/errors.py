"""Shared exception types.

ConfigurationError maps to CLI exit code 2; everything else is a runtime
failure (exit code 1).
"""


class ConfigurationError(ValueError):
    """A config value, scenario file, or argument combination is invalid."""


class ShapeError(ValueError):
    """Array dimensions do not match what the operation expects."""
