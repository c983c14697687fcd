"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (architecture, sampler setup, CLI flags)."""


class ContractError(ValueError):
    """An API precondition was violated by the caller."""


class NumericError(RuntimeError):
    """Non-finite values or an iteration cap hit inside a numeric routine."""


class DegenerateError(RuntimeError):
    """The problem collapsed (zero gradient / empty basis); usually means convergence."""
