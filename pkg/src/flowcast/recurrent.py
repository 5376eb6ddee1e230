"""Stacked (optionally bidirectional) LSTM regressor trained by BPTT.

Each cell sees the concatenation ``[h_{t-1}, x_t]``.  Layers after the first
receive the previous layer's output through a transfer matrix plus bias.  The
top layer's outputs are max-pooled over time per coordinate and a linear head
produces one normalized flow value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowcast.base import ParamModel
from flowcast.errors import ShapeError, UsageError
from flowcast.numcore import glorot_bound, seeded_rng, uniform_init

GATES = ("i", "f", "c", "o")
DIRECTIONS = ("forward", "backward")
_DIR_KEY = {"forward": "fwd", "backward": "bwd"}


def sigmoid(z):
    # exp of a non-positive argument only; saturates to exactly 1.0 for z > ~37
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0, e) / (1.0 + e)


@dataclass
class LstmCellParams:
    W_i: np.ndarray
    W_f: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.W_i)
        for g in GATES:
            W = np.asarray(getattr(self, f"W_{g}"), dtype=np.float64)
            b = np.asarray(getattr(self, f"b_{g}"), dtype=np.float64)
            if W.shape != shape or W.ndim != 2:
                raise ShapeError(f"gate {g} weight has shape {W.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise ShapeError(f"gate {g} bias has shape {b.shape}, expected ({shape[0]},)")
            if shape[1] <= shape[0]:
                raise ShapeError(f"weight {shape} leaves no room for the input ([h, x] concatenation)")
            setattr(self, f"W_{g}", W)
            setattr(self, f"b_{g}", b)

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmCellParams":
        kw = {f"W_{g}": np.zeros((hidden_size, hidden_size + input_size)) for g in GATES}
        kw.update({f"b_{g}": np.zeros(hidden_size) for g in GATES})
        return cls(**kw)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        W = np.concatenate([getattr(self, f"W_{g}") for g in GATES], axis=0)
        b = np.concatenate([getattr(self, f"b_{g}") for g in GATES])
        return W, b


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))


def _cell(W, b, x, h_prev, c_prev):
    H = h_prev.shape[-1]
    z_in = np.concatenate([h_prev, x], axis=-1)
    z = z_in @ W.T + b
    act = sigmoid(z)
    i = act[..., :H]
    f = act[..., H:2 * H]
    o = act[..., 3 * H:]
    g = np.tanh(z[..., 2 * H:3 * H])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return c, h, (z_in, i, f, g, o, c_prev, tc)


def lstm_cell_trace(params: LstmCellParams, x_t, prev: LstmState):
    """One step, also returning the gate activations ``{"i", "f", "c", "o"}``
    (``"c"`` is the tanh candidate)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != params.input_size:
        raise ShapeError(f"input has width {x_t.shape[-1]}, cell expects {params.input_size}")
    if prev.h.shape[-1] != params.hidden_size or prev.c.shape != prev.h.shape:
        raise ShapeError(
            f"state shapes c={prev.c.shape} h={prev.h.shape} do not match hidden size {params.hidden_size}"
        )
    W, b = params.stacked()
    c, h, (_, i, f, g, o, _, _) = _cell(W, b, x_t, prev.h, prev.c)
    return LstmState(c, h), {"i": i, "f": f, "c": g, "o": o}


def lstm_cell_step(params: LstmCellParams, x_t, prev: LstmState) -> LstmState:
    return lstm_cell_trace(params, x_t, prev)[0]


def _layer_forward(params: LstmCellParams, X, reverse: bool):
    """X: (B, T, I) -> outputs (B, T, H) aligned with input positions."""
    B, T, _ = X.shape
    H = params.hidden_size
    W, b = params.stacked()
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.empty((B, T, H))
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        c, h, cache = _cell(W, b, X[:, t], h, c)
        out[:, t] = h
        steps.append((t, cache))
    return out, (W, steps, X.shape)


def _layer_backward(cache, dout):
    W, steps, (B, T, I) = cache
    H = W.shape[0] // 4
    n = len(steps)
    dz_all = np.empty((n, B, 4 * H))
    zin_all = np.empty((n, B, W.shape[1]))
    dX = np.zeros((B, T, I))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for s in range(n - 1, -1, -1):
        t, (z_in, i, f, g, o, c_prev, tc) = steps[s]
        dh = dout[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[s]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        zin_all[s] = z_in
        dc_next = dc * f
        dz_in = dz @ W
        dh_next = dz_in[:, :H]
        dX[:, t] = dz_in[:, H:]
    dz_flat = dz_all.reshape(n * B, 4 * H)
    dW = dz_flat.T @ zin_all.reshape(n * B, -1)
    db = dz_flat.sum(axis=0)
    return dX, dW, db


def lstm_layer_forward(params: LstmCellParams, inputs, direction: str = "forward") -> np.ndarray:
    """Run one layer from a zero state; returns h_t for every input position."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("inputs must be a nonempty sequence of vectors")
    if X.shape[1] != params.input_size:
        raise ShapeError(f"input width {X.shape[1]} != cell input size {params.input_size}")
    out, _ = _layer_forward(params, X[None], reverse=(direction == "backward"))
    return out[0]


class LstmNetwork(ParamModel):
    """``hidden_size`` is per direction; with the defaults (150, bidirectional)
    the pooled feature vector has 300 entries."""

    kind = "lstm"

    def __init__(
        self,
        n_features: int,
        hidden_size: int = 150,
        n_layers: int = 1,
        bidirectional: bool = True,
        forget_bias: float = 1.0,
        seed: int = 0,
    ):
        super().__init__()
        if hidden_size < 1 or n_layers < 1:
            raise ValueError("hidden_size and n_layers must be >= 1")
        self.n_features = int(n_features)
        self.hidden_size = int(hidden_size)
        self.n_layers = int(n_layers)
        self.bidirectional = bool(bidirectional)
        self.forget_bias = float(forget_bias)
        self.seed = int(seed)

        rng = seeded_rng(self.seed)
        H = self.hidden_size
        for j in range(self.n_layers):
            if j > 0:
                w_prev = self.out_width
                self.params[f"l{j}.transfer.weight"] = uniform_init(rng, w_prev, H, glorot_bound(w_prev, H))
                self.params[f"l{j}.transfer.bias"] = np.zeros(H)
            n_in = self.n_features if j == 0 else H
            for d in self.directions:
                prefix = f"l{j}.{_DIR_KEY[d]}"
                bound = glorot_bound(H + n_in, H)
                for g in GATES:
                    self.params[f"{prefix}.W_{g}"] = uniform_init(rng, H, H + n_in, bound)
                for g in GATES:
                    self.params[f"{prefix}.b_{g}"] = np.full(H, self.forget_bias if g == "f" else 0.0)
        W = self.out_width
        self.params["fc.weight"] = uniform_init(rng, 1, W, glorot_bound(W, 1))
        self.params["fc.bias"] = np.zeros(1)

    @property
    def directions(self) -> tuple[str, ...]:
        return DIRECTIONS if self.bidirectional else DIRECTIONS[:1]

    @property
    def out_width(self) -> int:
        return self.hidden_size * len(self.directions)

    def config(self) -> dict:
        return {
            "n_features": self.n_features,
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "bidirectional": int(self.bidirectional),
            "forget_bias": self.forget_bias,
            "seed": self.seed,
        }

    def cell_params(self, layer: int, direction: str = "forward") -> LstmCellParams:
        prefix = f"l{layer}.{_DIR_KEY[direction]}"
        return LstmCellParams(**{
            f"{kind}_{g}": self.params[f"{prefix}.{kind}_{g}"] for kind in ("W", "b") for g in GATES
        })

    def _stack(self, X):
        layer_caches = []
        inp = X
        out = None
        for j in range(self.n_layers):
            if j > 0:
                inp = out @ self.params[f"l{j}.transfer.weight"] + self.params[f"l{j}.transfer.bias"]
            outs, caches = [], []
            for d in self.directions:
                cp = self.cell_params(j, d)
                if inp.shape[2] != cp.input_size:
                    raise ShapeError(f"layer {j}: input width {inp.shape[2]} != cell input size {cp.input_size}")
                o, cache = _layer_forward(cp, inp, reverse=(d == "backward"))
                outs.append(o)
                caches.append(cache)
            prev_out = out
            out = np.concatenate(outs, axis=2)
            layer_caches.append((prev_out, caches))
        return out, layer_caches

    def forward(self, X) -> np.ndarray:
        X = self._check_batch(X)
        out, layer_caches = self._stack(X)
        arg = out.argmax(axis=1)  # (B, W)
        pooled = np.take_along_axis(out, arg[:, None, :], axis=1)[:, 0, :]
        y = pooled @ self.params["fc.weight"][0] + self.params["fc.bias"][0]
        self._cache = (X, out.shape, arg, pooled, layer_caches)
        return y

    def backward(self, dy) -> dict[str, np.ndarray]:
        X, out_shape, arg, pooled, layer_caches = self._require_cache()
        dy = np.asarray(dy, dtype=np.float64).reshape(-1)
        if dy.shape[0] != X.shape[0]:
            raise ShapeError(f"upstream gradient has {dy.shape[0]} entries for a batch of {X.shape[0]}")
        H = self.hidden_size
        grads = {
            "fc.weight": (dy @ pooled)[None, :],
            "fc.bias": np.array([dy.sum()]),
        }
        dout = np.zeros(out_shape)
        np.put_along_axis(dout, arg[:, None, :], (dy[:, None] * self.params["fc.weight"][0])[:, None, :], axis=1)
        for j in range(self.n_layers - 1, -1, -1):
            prev_out, caches = layer_caches[j]
            d_inp = None
            for k, (d, cache) in enumerate(zip(self.directions, caches)):
                dX, dW, db = _layer_backward(cache, dout[:, :, k * H:(k + 1) * H])
                prefix = f"l{j}.{_DIR_KEY[d]}"
                for n, g in enumerate(GATES):
                    grads[f"{prefix}.W_{g}"] = dW[n * H:(n + 1) * H]
                    grads[f"{prefix}.b_{g}"] = db[n * H:(n + 1) * H]
                d_inp = dX if d_inp is None else d_inp + dX
            if j > 0:
                grads[f"l{j}.transfer.weight"] = np.einsum("bti,bth->ih", prev_out, d_inp)
                grads[f"l{j}.transfer.bias"] = d_inp.sum(axis=(0, 1))
                dout = d_inp @ self.params[f"l{j}.transfer.weight"].T
        return grads

    @classmethod
    def from_records(cls, meta: dict, tensors: dict) -> "LstmNetwork":
        net = cls(
            n_features=int(meta["n_features"]),
            hidden_size=int(meta["hidden_size"]),
            n_layers=int(meta["n_layers"]),
            bidirectional=bool(int(meta["bidirectional"])),
            forget_bias=float(meta["forget_bias"]),
            seed=int(meta["seed"]),
        )
        net.set_params(tensors)
        return net


def temporal_max_pool(seq) -> np.ndarray:
    """Per-coordinate maximum over time of a (T, W) sequence."""
    return np.asarray(seq, dtype=np.float64).max(axis=0)


def stacked_forward(net: LstmNetwork, x) -> np.ndarray:
    """Top-layer outputs, shape (N, out_width), for one window."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (N, D) window, got {x.shape}")
    if x.shape[1] != net.n_features:
        raise ShapeError(f"layer 0: input width {x.shape[1]} != {net.n_features}")
    out, _ = net._stack(x[None])
    return out[0]


def lstm_predict(net: LstmNetwork, x) -> float:
    """Scalar prediction for one window; caches state for lstm_backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (N, D) window, got {x.shape}")
    return float(net.forward(x[None])[0])


def lstm_backward(net: LstmNetwork, x, upstream_grad: float) -> dict[str, np.ndarray]:
    cache = net._require_cache()
    if cache[0].shape[0] != 1 or not np.array_equal(cache[0][0], np.asarray(x, dtype=np.float64)):
        raise UsageError("cached trajectory does not belong to this input; call lstm_predict first")
    return net.backward(np.array([upstream_grad], dtype=np.float64))
