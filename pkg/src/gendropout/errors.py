"""Exception types shared across the package."""


class GenDropoutError(Exception):
    """Base class for all package errors."""


class DimensionError(GenDropoutError, ValueError):
    """Operand shapes are incompatible."""


class LabelError(GenDropoutError, ValueError):
    """A class label is outside ``[0, num_classes)``."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericError(GenDropoutError, ArithmeticError):
    """A NaN or infinite value appeared where a finite one is required."""


class ContractError(GenDropoutError, ValueError):
    """A precondition of an operation was violated."""


class SpecError(GenDropoutError, ValueError):
    """A network specification is inconsistent."""


class PruneError(GenDropoutError, ValueError):
    """Pruning would produce an invalid network."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ConfigError(GenDropoutError, ValueError):
    """An experiment config file is malformed or names an unknown value."""
