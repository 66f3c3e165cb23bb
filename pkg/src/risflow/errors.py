"""Exception types raised across the package."""


class RisFlowError(Exception):
    pass


class InvalidModelError(RisFlowError, ValueError):
    """A correlation model with out-of-range parameters."""


class DimensionError(RisFlowError, ValueError):
    pass


class DomainError(RisFlowError, ValueError):
    """An argument outside the mathematical domain of an operation."""


class GeometryError(RisFlowError, ValueError):
    """Degenerate placement, e.g. a node sitting on the RIS."""


class NumericError(RisFlowError, ArithmeticError):
    pass


class BudgetError(RisFlowError, ValueError):
    """An enumeration or sampling request above the allowed budget."""


class ConfigError(RisFlowError, ValueError):
    pass
