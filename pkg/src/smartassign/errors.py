"""Exception types raised across the package."""


class SmartAssignError(Exception):
    """Base class for all package errors."""


class AccreditationGap(SmartAssignError):
    """A real case has no accredited mediator."""


class InsufficientData(SmartAssignError):
    """Not enough mediators/cases to estimate variance components."""


class DegenerateDesign(UserWarning):
    """Regression design identifies only an intercept and outcomes are constant."""


class InvalidProbability(SmartAssignError, ValueError):
    pass


class QuadratureFailure(SmartAssignError):
    pass


class InvalidHorizon(SmartAssignError, ValueError):
    pass


class Infeasible(SmartAssignError):
    pass


class MaxIterations(SmartAssignError):
    """Solver stopped before reaching tolerance; ``solution`` holds the best iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class NoAccreditedMediator(SmartAssignError):
    pass


class TooLarge(SmartAssignError):
    pass


class MissingDurationParams(SmartAssignError, KeyError):
    pass


class SchemaError(SmartAssignError):
    pass


class IntegrityError(SmartAssignError):
    pass
