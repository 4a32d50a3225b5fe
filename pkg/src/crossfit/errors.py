"""Exception and warning types shared across the package."""


class CrossfitError(Exception):
    """Base class for crossfit errors."""


class DataValidationError(CrossfitError, ValueError):
    """Input data violates the design-frame contract."""


class SpecificationError(CrossfitError, ValueError):
    """Model specification is inconsistent with the data (bad term, rank...)."""


class NumericalError(CrossfitError, RuntimeError):
    """The fitting algorithm hit a numerical dead end."""


class FitWarning(UserWarning):
    """Non-fatal fitting issue (non-convergence, clipped correlation...)."""
