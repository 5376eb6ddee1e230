"""Shared plumbing for the two neural regressors."""

from __future__ import annotations

import numpy as np

from flowcast.errors import ShapeError, UsageError


class ParamModel:
    """Holds named float64 parameter arrays plus the forward cache.

    Subclasses implement ``forward(X) -> (B,)`` on a batch ``X`` of shape
    ``(B, N, D)`` and ``backward(dy) -> dict`` returning gradients summed over
    the batch, keyed like ``params``.
    """

    kind = "base"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._cache = None

    def get_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(params)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, value in params.items():
            if name not in self.params:
                raise ShapeError(f"unknown parameter {name!r}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {self.params[name].shape}, got {value.shape}"
                )
            self.params[name] = value.copy()
        self._cache = None

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def _check_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ShapeError(f"expected a batch of shape (B, N, D), got {X.shape}")
        if X.shape[2] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, input has {X.shape[2]}")
        return X

    def _require_cache(self):
        if self._cache is None:
            raise UsageError("backward called without a cached forward pass")
        return self._cache

    def predict(self, X, chunk: int = 512) -> np.ndarray:
        """Predictions for a batch (or a single window) without keeping the cache."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        saved = self._cache
        out = np.concatenate([self.forward(X[i:i + chunk]) for i in range(0, len(X), chunk)])
        self._cache = saved
        return out[0] if single else out

    def config(self) -> dict:
        raise NotImplementedError

    def to_records(self) -> tuple[dict, dict]:
        meta = {"model": self.kind}
        meta.update({k: _fmt(v) for k, v in self.config().items()})
        return meta, self.get_params()


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)
