"""Exception types raised across the package."""


class FreeSketchError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FreeSketchError, ValueError):
    """Dimensions or parameters violate an operation's preconditions."""


class SizeGuardError(FreeSketchError, MemoryError):
    """A dense materialization or transport problem would be too large."""


class RegularizationTooNegativeError(FreeSketchError, ArithmeticError):
    """The ridge level is at or below minus the smallest positive Gram eigenvalue."""

    def __init__(self, message, lam=None, min_positive_eig=None):
        super().__init__(message)
        self.lam = lam
        self.min_positive_eig = min_positive_eig


class IterationLimitError(FreeSketchError, ArithmeticError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateDenominatorError(FreeSketchError, ZeroDivisionError):
    """GCV denominator ``1 - tr[L]/n`` vanished."""


class DegenerateLeverageError(FreeSketchError, ZeroDivisionError):
    """A smoother diagonal entry equals one, so the LOO shortcut is undefined."""


class SubordinationDomainError(FreeSketchError, ValueError):
    """No implicit regularization solves the subordination relation here."""


class MemberFitError(FreeSketchError):
    """Fitting one ensemble member failed; carries the member index."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class RecipeStepError(FreeSketchError):
    """A step of the observation-sketch GCV correction failed."""

    def __init__(self, message, step):
        super().__init__(f"step {step}: {message}")
        self.step = step
