"""Exception types shared across the package."""


class ParseError(ValueError):
    """A data file could not be parsed; message names the offending line."""


class ValidationError(ValueError):
    """A record or value violates a declared invariant."""


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


class StateError(RuntimeError):
    """An operation was called before its required fitting step."""


class UndefinedMetricError(ValueError):
    """A rate metric was requested over an empty denominator."""
