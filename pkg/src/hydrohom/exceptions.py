"""Exception hierarchy shared by all modules."""


class HydroHomError(Exception):
    """Base class for all errors raised by hydrohom."""


class DimensionMismatch(HydroHomError, ValueError):
    pass


class SingularBasis(HydroHomError):
    """The stacked (a; b) matrix is rank deficient or badly conditioned."""

    def __init__(self, point, condition_number):
        self.point = point
        self.condition_number = condition_number
        super().__init__(
            f"stacked (a; b) matrix singular at node {point} "
            f"(condition number {condition_number:.3e})"
        )


class DegenerateThermodynamics(HydroHomError):
    def __init__(self, min_value, bound):
        self.min_value = min_value
        self.bound = bound
        super().__init__(f"thermodynamic lower bound violated: min {min_value:.6g} < {bound:.6g}")


class DegenerateForm(HydroHomError):
    """The quadratic form is only a seminorm (vanishing oscillation)."""

    def __init__(self, message, oscillation=None):
        self.oscillation = oscillation
        super().__init__(message)


class NoConvergence(HydroHomError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"CG did not converge: {iterations} iterations, residual {residual:.3e}")


class NonIntegerScale(HydroHomError, ValueError):
    pass


class TooLarge(HydroHomError, ValueError):
    pass


class SingularTensor(HydroHomError):
    pass


class ResolutionInsufficient(HydroHomError, ValueError):
    pass


class ConfigError(HydroHomError, ValueError):
    pass
