"""Exception types raised across the package."""


class CfdError(Exception):
    """Base class for all package errors."""


class ConfigError(CfdError, ValueError):
    pass


class MaskError(CfdError, ValueError):
    pass


class PhantomGenerationError(CfdError, RuntimeError):
    pass


class MetricError(CfdError, ValueError):
    pass


class TrainingError(CfdError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


class WeightsFormatError(CfdError, ValueError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


class WeightsTruncatedError(WeightsFormatError):
    pass


class WeightsShapeError(WeightsFormatError):
    pass
