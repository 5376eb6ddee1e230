"""Streamflow forecasting toolkit: CNN and bidirectional-LSTM regressors written
directly in numpy, classical baselines, and a repeated random-split evaluation
harness for daily hydro-climate series."""

from flowcast.errors import (
    DataError,
    SchemaError,
    ShapeError,
    TrainingDivergence,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "SchemaError",
    "ShapeError",
    "TrainingDivergence",
    "UsageError",
    "__version__",
]
