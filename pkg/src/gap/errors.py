"""Exception hierarchy shared by all gap modules."""


class GapError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GapError):
    """An array has the wrong shape, or two arrays disagree in shape."""


class ZeroPhotonError(GapError):
    """An operation that needs at least one photon received an empty image."""


class InvalidSignalError(GapError):
    """A signal grid contains negative, non-finite, or otherwise unusable values."""


class InvalidProbabilityError(GapError):
    """A probability parameter lies outside [0, 1]."""


class InvalidIntensityError(GapError):
    """A photon intensity (photons/pixel) is non-positive or non-finite."""


class RangeError(GapError):
    """An index, variant, or extent parameter lies outside its valid range."""


class EmptyRegionError(GapError):
    """No non-empty patch could be found within the retry budget."""


class EmptyDatasetError(GapError):
    """The training set is empty or too small to split."""


class DivergenceError(GapError):
    """Training produced a non-finite loss.

    Attributes
    ----------
    step : int
        Global optimizer step index at which the loss became non-finite.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class DegeneratePosteriorError(GapError):
    """Every prior support point assigns zero likelihood to the observation."""


class RegistryCoverageError(GapError):
    """No expert range covers the requested pseudo-PSNR value."""


class InvalidGroundTruthError(GapError):
    """A ground-truth image is unusable (e.g. non-positive maximum)."""


class ConfigError(GapError):
    """A CLI configuration value failed validation.

    Attributes
    ----------
    field : str
        Name of the offending configuration field.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
