"""Exception hierarchy shared by all modules."""


class HarvestError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(HarvestError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        names = ", ".join(v.name for v in self.violations)
        super().__init__(f"invalid parameters: {names}")


class DiscriminantNegative(HarvestError, ValueError):
    """A^2 - 4BC < 0: the linearized value ODE has no real exponents."""

    def __init__(self, A, B, C):
        self.A, self.B, self.C = A, B, C
        self.discriminant = A * A - 4.0 * B * C
        super().__init__(
            f"A^2 - 4BC = {self.discriminant:.6g} < 0 (A={A:.6g}, B={B:.6g}, C={C:.6g})"
        )


class OutOfDomain(HarvestError, ValueError):
    pass


class LambdaZero(HarvestError, ValueError):
    pass


class NonPositiveDt(HarvestError, ValueError):
    pass


class InsufficientData(HarvestError, ValueError):
    pass


class NonNegativeDrift(HarvestError, ValueError):
    pass


class StartStockNonPositive(HarvestError, ValueError):
    pass


class GridTooCoarse(HarvestError, ValueError):
    pass


class NonConvergence(HarvestError, RuntimeError):
    pass


class ParameterMismatch(HarvestError, ValueError):
    pass


class ConfigError(HarvestError, ValueError):
    """Configuration or input-file problem (CLI exit code 2)."""
