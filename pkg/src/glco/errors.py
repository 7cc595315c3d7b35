"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation."""


class ContractError(ValueError):
    """A documented precondition on values (not shapes) was violated."""


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf while finiteness checks were strict."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class DataError(OSError):
    """Dataset or image files are missing, unmatched or unreadable."""


class CheckpointError(ValueError):
    """Checkpoint tensors do not match the architecture they are loaded into."""

    def __init__(self, message, mismatches=()):
        super().__init__(message)
        self.mismatches = list(mismatches)
