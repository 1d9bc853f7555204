"""Exception hierarchy shared across the package."""


class BnnSpdeError(Exception):
    """Base class for all errors raised by bnn_spde."""


class ValidationError(BnnSpdeError, ValueError):
    """Invalid configuration or argument, detected before any compute."""


class DimensionMismatch(BnnSpdeError, ValueError):
    pass


class NumericalError(BnnSpdeError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class NotFactorizable(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class DegenerateComponent(NumericalError):
    pass


class EmptyData(BnnSpdeError, ValueError):
    pass


class NonFiniteState(NumericalError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class EmptyChain(BnnSpdeError, ValueError):
    pass


class MissingParameterField(BnnSpdeError, ValueError):
    pass


class SolverFailed(NumericalError):
    pass


class SingularSystem(SolverFailed):
    pass


class NonPositiveCoefficient(BnnSpdeError, ValueError):
    pass


class NewtonDiverged(SolverFailed):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ZeroReference(BnnSpdeError, ValueError):
    pass


class MissingArtifacts(BnnSpdeError, FileNotFoundError):
    pass
