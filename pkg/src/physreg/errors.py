"""Exception types raised across the toolkit."""


class PhysregError(Exception):
    pass


class DomainError(PhysregError, ValueError):
    """Point outside a basis domain, or an invalid extent/grid."""


class UnsupportedOrderError(PhysregError, ValueError):
    pass


class ShapeError(PhysregError, ValueError):
    pass


class OperatorMismatchError(PhysregError, TypeError):
    """Operator and basis family (or trial set) cannot be combined."""


class SingularSystemError(PhysregError, ArithmeticError):
    pass


class ProjectionError(PhysregError, ArithmeticError):
    """A projected solution does not satisfy its own constraints."""


class UnstableSchemeError(PhysregError, ValueError):
    pass


class BlowUpError(PhysregError, OverflowError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ConfigError(PhysregError, ValueError):
    pass
