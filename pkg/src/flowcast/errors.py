"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not conform."""


class UsageError(RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class DataError(ValueError):
    """Input data is malformed: bad cells, duplicate dates, missing values."""


class SchemaError(DataError):
    """A required column or schema key is missing."""


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
