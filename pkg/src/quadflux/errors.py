"""Exception hierarchy shared by all quadflux modules."""


class QuadfluxError(Exception):
    """Base class for every error raised by this package."""


class MeshError(QuadfluxError, ValueError):
    """Invalid mesh input, e.g. marking a cell that is not a leaf."""


class RefinementBudgetError(QuadfluxError):
    """Refinement (or its closure) would exceed the maximum quadtree level."""


class NumericalFailure(QuadfluxError):
    """The linear solver did not reach the requested residual."""


class AssemblyError(QuadfluxError):
    """The reduced system is not symmetric positive definite."""


class SingularPointError(QuadfluxError, ValueError):
    """Gradient requested at a singular point of an exact solution."""


class UnsupportedOperation(QuadfluxError):
    """The problem data lacks what the operation needs (e.g. exact gradient)."""


class InsufficientDataError(QuadfluxError, ValueError):
    """Too few convergence records to fit a rate."""


class UndefinedEffectivity(QuadfluxError, ZeroDivisionError):
    """Effectivity index requested for a zero energy error."""
