"""Multi-height 1-D convolutional regressor.

A window ``X`` (N days x D features) is scanned by kernels spanning all D
columns and H consecutive days.  Each kernel gives one ReLU feature map, each
map is max-pooled (globally by default), the pooled values of every kernel are
concatenated and a linear head maps them to one normalized flow value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from flowcast.base import ParamModel
from flowcast.errors import ShapeError, UsageError
from flowcast.numcore import glorot_bound, seeded_rng, uniform_init


@dataclass
class ConvKernel:
    weights: np.ndarray  # (H, D)
    bias: float = 0.0

    @property
    def height(self) -> int:
        return self.weights.shape[0]


def conv_output_length(n: int, height: int, stride: int = 1) -> int:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if n < height:
        raise ShapeError(f"input has {n} rows but kernel height is {height}")
    return (n - height) // stride + 1


def pool_output_length(length: int, pool_height: int, pool_stride: int = 1) -> int:
    # trailing partial windows are dropped
    if pool_stride < 1:
        raise ValueError(f"pool stride must be >= 1, got {pool_stride}")
    if pool_height < 1 or pool_height > length:
        raise ShapeError(f"pool height {pool_height} does not fit a feature map of length {length}")
    return (length - pool_height) // pool_stride + 1


def conv_forward(x, kernel: ConvKernel, stride: int = 1) -> np.ndarray:
    """ReLU feature map of one kernel slid down the rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(kernel.weights, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"kernel {w.shape} does not align with input {x.shape}")
    n_out = conv_output_length(x.shape[0], w.shape[0], stride)
    windows = sliding_window_view(x, w.shape, axis=(0, 1))[::stride, 0][:n_out]
    pre = np.einsum("phd,hd->p", windows, w) + kernel.bias
    return np.maximum(pre, 0.0)


def _pool_windows(length: int, pool_height: int, pool_stride: int) -> np.ndarray:
    n_out = pool_output_length(length, pool_height, pool_stride)
    return np.arange(n_out)[:, None] * pool_stride + np.arange(pool_height)[None, :]


def max_pool(c, pool_height: int, pool_stride: int = 1) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1:
        raise ShapeError(f"expected a 1-D feature map, got shape {c.shape}")
    return c[_pool_windows(len(c), pool_height, pool_stride)].max(axis=1)


class CnnModel(ParamModel):
    """Kernels of several heights, ``channels_per_height`` kernels each.

    ``pool_height=None`` pools each feature map to a single value, so the head
    sees ``len(kernel_heights) * channels_per_height`` features.  A finite
    ``pool_height`` needs ``lookback`` to size the head.
    """

    kind = "cnn"

    def __init__(
        self,
        n_features: int,
        kernel_heights=(3, 5, 7),
        channels_per_height: int = 100,
        conv_stride: int = 1,
        pool_height: int | None = None,
        pool_stride: int = 1,
        lookback: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        if conv_stride < 1 or pool_stride < 1:
            raise ValueError("strides must be >= 1")
        if channels_per_height < 1 or not kernel_heights:
            raise ValueError("need at least one kernel height and one channel")
        self.n_features = int(n_features)
        self.kernel_heights = tuple(int(h) for h in kernel_heights)
        self.channels_per_height = int(channels_per_height)
        self.conv_stride = int(conv_stride)
        self.pool_height = pool_height
        self.pool_stride = int(pool_stride)
        self.lookback = lookback
        self.seed = int(seed)

        if pool_height is not None:
            if lookback is None:
                raise ValueError("a finite pool_height requires lookback to size the head")
            self._pooled = [
                pool_output_length(conv_output_length(lookback, h, conv_stride), pool_height, pool_stride)
                for h in self.kernel_heights
            ]
        else:
            if lookback is not None and lookback < max(self.kernel_heights):
                raise ShapeError(f"lookback {lookback} is shorter than kernel height {max(self.kernel_heights)}")
            self._pooled = [1] * len(self.kernel_heights)

        rng = seeded_rng(self.seed)
        C, D = self.channels_per_height, self.n_features
        for h in self.kernel_heights:
            bound = glorot_bound(h * D, C)
            self.params[f"conv{h}.weight"] = uniform_init(rng, C, h * D, bound).reshape(C, h, D)
            self.params[f"conv{h}.bias"] = np.zeros(C)
        n_fused = self.n_fused
        self.params["fc.weight"] = uniform_init(rng, 1, n_fused, glorot_bound(n_fused, 1))
        self.params["fc.bias"] = np.zeros(1)

    @property
    def n_fused(self) -> int:
        return self.channels_per_height * sum(self._pooled)

    def config(self) -> dict:
        return {
            "n_features": self.n_features,
            "kernel_heights": list(self.kernel_heights),
            "channels_per_height": self.channels_per_height,
            "conv_stride": self.conv_stride,
            "pool_height": self.pool_height,
            "pool_stride": self.pool_stride,
            "lookback": self.lookback,
            "seed": self.seed,
        }

    def kernel(self, height: int, channel: int) -> ConvKernel:
        return ConvKernel(
            self.params[f"conv{height}.weight"][channel].copy(),
            float(self.params[f"conv{height}.bias"][channel]),
        )

    def forward(self, X) -> np.ndarray:
        X = self._check_batch(X)
        B, N, D = X.shape
        C = self.channels_per_height
        fused, per_height = [], []
        for h in self.kernel_heights:
            P = conv_output_length(N, h, self.conv_stride)
            # (B, P, H*D) sliding windows, one row per output position
            cols = sliding_window_view(X, (h, D), axis=(1, 2))[:, :: self.conv_stride, 0][:, :P]
            cols = cols.reshape(B, P, h * D)
            W = self.params[f"conv{h}.weight"].reshape(C, h * D)
            pre = cols @ W.T + self.params[f"conv{h}.bias"]
            act = np.maximum(pre, 0.0)
            if self.pool_height is None:
                idx = np.arange(P)[None, :]
            else:
                idx = _pool_windows(P, self.pool_height, self.pool_stride)
                if self.lookback is not None and len(idx) != self._pooled[len(per_height)]:
                    raise ShapeError(f"input length {N} does not match configured lookback {self.lookback}")
            gathered = act[:, idx, :]  # (B, Np, Hp, C)
            arg = gathered.argmax(axis=2)
            pooled = np.take_along_axis(gathered, arg[:, :, None, :], axis=2)[:, :, 0, :]
            src = idx[np.arange(idx.shape[0])[None, :, None], arg]  # (B, Np, C)
            fused.append(pooled.transpose(0, 2, 1).reshape(B, -1))
            per_height.append((cols, pre, src, P))
        F = np.concatenate(fused, axis=1)
        if F.shape[1] != self.n_fused:
            raise ShapeError(f"fused feature length {F.shape[1]} != head width {self.n_fused}")
        y = F @ self.params["fc.weight"][0] + self.params["fc.bias"][0]
        self._cache = (X, F, per_height)
        return y

    def backward(self, dy) -> dict[str, np.ndarray]:
        X, F, per_height = self._require_cache()
        dy = np.asarray(dy, dtype=np.float64).reshape(-1)
        if dy.shape[0] != X.shape[0]:
            raise ShapeError(f"upstream gradient has {dy.shape[0]} entries for a batch of {X.shape[0]}")
        B, _, D = X.shape
        C = self.channels_per_height
        grads = {
            "fc.weight": (dy @ F)[None, :],
            "fc.bias": np.array([dy.sum()]),
        }
        dF = dy[:, None] * self.params["fc.weight"][0][None, :]
        offset = 0
        for h, (cols, pre, src, P) in zip(self.kernel_heights, per_height):
            n_p = src.shape[1]
            dpooled = dF[:, offset: offset + C * n_p].reshape(B, C, n_p).transpose(0, 2, 1)
            offset += C * n_p
            dact = np.zeros((B, P, C))
            b_idx = np.arange(B)[:, None, None]
            c_idx = np.arange(C)[None, None, :]
            np.add.at(dact, (b_idx, src, c_idx), dpooled)
            dpre = dact * (pre > 0)
            grads[f"conv{h}.weight"] = np.einsum("bpc,bpk->ck", dpre, cols).reshape(C, h, D)
            grads[f"conv{h}.bias"] = dpre.sum(axis=(0, 1))
        return grads

    @classmethod
    def from_records(cls, meta: dict, tensors: dict) -> "CnnModel":
        pool_height = int(meta["pool_height"]) if meta.get("pool_height") else None
        lookback = int(meta["lookback"]) if meta.get("lookback") else None
        model = cls(
            n_features=int(meta["n_features"]),
            kernel_heights=[int(h) for h in meta["kernel_heights"].split(",")],
            channels_per_height=int(meta["channels_per_height"]),
            conv_stride=int(meta["conv_stride"]),
            pool_height=pool_height,
            pool_stride=int(meta["pool_stride"]),
            lookback=lookback,
            seed=int(meta["seed"]),
        )
        model.set_params(tensors)
        return model


def cnn_forward(model: CnnModel, x) -> float:
    """Scalar prediction for one (N, D) window; caches state for cnn_backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (N, D) window, got {x.shape}")
    return float(model.forward(x[None])[0])


def cnn_backward(model: CnnModel, x, upstream_grad: float) -> dict[str, np.ndarray]:
    cache = model._require_cache()
    if cache[0].shape[0] != 1 or not np.array_equal(cache[0][0], np.asarray(x, dtype=np.float64)):
        raise UsageError("cached forward state does not belong to this input; call cnn_forward first")
    return model.backward(np.array([upstream_grad], dtype=np.float64))
