"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class ContractError(RuntimeError):
    """A call violates a precondition of the API (wrong kind of input, reuse, ...)."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Malformed or inconsistent dataset."""
