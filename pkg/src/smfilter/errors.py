"""Exception types shared across the package."""


class NumericalError(Exception):
    """Base class for numerical failures (exit code 3 in the CLI)."""


class SpdError(NumericalError, ValueError):
    """A matrix required to be symmetric positive definite is not,
    even after the one-shot jitter retry."""


class RankDeficiencyError(NumericalError, ValueError):
    """A point cloud (or its weighted moment matrix) does not span the
    space needed to define an enclosing ellipsoid."""

    def __init__(self, message, rank=None, required=None):
        super().__init__(message)
        self.rank = rank
        self.required = required


class EmptyIntersectionError(NumericalError, RuntimeError):
    """The prediction and the measurement-consistent set are disjoint
    (the fusion consistency parameter delta reached 1)."""

    def __init__(self, message, delta=None):
        super().__init__(message)
        self.delta = delta


class MeasurementDomainError(NumericalError, ValueError):
    """An inverse-measurement map was evaluated outside its domain
    (for example a negative range after noise subtraction)."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2 in the CLI)."""
