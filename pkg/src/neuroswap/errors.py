"""Exception types shared across the package."""


class NeuroswapError(Exception):
    """Base class for all package errors."""


class DimensionError(NeuroswapError, ValueError):
    """Shapes or extents are incompatible."""


class DomainError(NeuroswapError, ValueError):
    """An input lies outside a function's mathematical domain."""


class ConfigurationError(NeuroswapError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(NeuroswapError, RuntimeError):
    """An API precondition was violated."""


class NonFiniteError(NeuroswapError, FloatingPointError):
    """A NaN or Inf appeared in a computation."""
