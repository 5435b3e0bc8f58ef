"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (shape, sign, range)."""


class NumericalError(ArithmeticError):
    """Iteration produced a non-finite or otherwise unusable value."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class InvalidProbeError(ValueError):
    """A probe vector cannot start a Krylov iteration."""


class DenseSizeError(ValueError):
    """Dense construction requested above the configured size cap."""


class OutOfGridError(ValueError):
    """A data point falls outside the interpolation grid's coverage."""

    def __init__(self, index, dim, value, low, high):
        super().__init__(
            f"point {index} lies outside the grid in dimension {dim}: "
            f"{value!r} not in [{low!r}, {high!r}]"
        )
        self.index = index
        self.dim = dim


class GeometryError(ValueError):
    """Design points do not determine a unique interpolant."""


class ConfigurationError(ValueError):
    """Inconsistent backend, budget or experiment configuration."""
