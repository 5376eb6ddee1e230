"""Scoring in original (denormalized) flow units."""

from __future__ import annotations

import numpy as np

from flowcast.errors import DataError, ShapeError

ZERO_FLOW_GUARD = 1e-6


def relative_error(predict, real, guard: float = ZERO_FLOW_GUARD) -> float:
    """Mean of ``|predict - real| / real``.

    Raises :class:`DataError` if any ``|real| <= guard``; the ratio would blow
    up and padding the denominator would hide it.
    """
    predict = np.asarray(predict, dtype=np.float64).reshape(-1)
    real = np.asarray(real, dtype=np.float64).reshape(-1)
    if predict.shape != real.shape:
        raise ShapeError(f"predict has {predict.size} values, real has {real.size}")
    if real.size == 0:
        raise ValueError("relative_error needs at least one value")
    bad = np.flatnonzero(np.abs(real) <= guard)
    if bad.size:
        shown = ", ".join(str(i) for i in bad[:20])
        raise DataError(f"real values at or below the zero-flow guard {guard} at indices [{shown}]"
                        + (" ..." if bad.size > 20 else ""))
    return float(np.mean(np.abs(predict - real) / real))
