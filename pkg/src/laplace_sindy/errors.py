"""Exception hierarchy shared by every stage of the identification pipeline."""


class IdentificationError(Exception):
    """Base class for all errors raised by :mod:`laplace_sindy`."""


class NonFinite(IdentificationError):
    """A simulated or transformed quantity became NaN or infinite."""


class UnknownKind(IdentificationError):
    pass


class GridTooCoarse(IdentificationError):
    """The requested step violates the stability bound of the scheme."""


class ParseError(IdentificationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(IdentificationError):
    pass


class LibraryOverflow(IdentificationError):
    """The candidate library would exceed the configured size cap."""


class TooShort(IdentificationError):
    pass


class NonUniformGrid(IdentificationError):
    pass


class NonPositiveFrequency(IdentificationError):
    pass


class MissingInitialValues(IdentificationError):
    pass


class PoleProximity(IdentificationError):
    """A frequency sits too close to a pole of a closed-form transform."""


class TooFewSnapshots(IdentificationError):
    pass


class AllZero(IdentificationError):
    """Every coefficient was thresholded away."""


class RankDeficient(IdentificationError):
    pass


class NotExplicitlySolvable(IdentificationError):
    pass


class Diverged(IdentificationError):
    pass


class DegenerateSampleSize(IdentificationError):
    pass


class ZeroVariance(IdentificationError):
    """Residuals are identically zero, so the likelihood is unbounded."""


class SingularDerivativeBlock(IdentificationError):
    pass


class EmptySelection(IdentificationError):
    pass


class ConfigError(IdentificationError):
    pass


class StageFailed(IdentificationError):
    """An experiment stage raised; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"{stage}: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error
