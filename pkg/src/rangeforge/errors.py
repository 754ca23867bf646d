from __future__ import annotations


class RangeForgeError(Exception):
    """Base class for harness errors."""


class ValidationError(RangeForgeError):
    """Bad input: a config, manifest, or file that fails its contract."""


class ConfigError(ValidationError):
    pass
