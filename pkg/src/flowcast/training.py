"""Huber loss, AdaDelta and the minibatch loop shared by both neural models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from flowcast.errors import ShapeError, TrainingDivergence
from flowcast.metrics import relative_error
from flowcast.numcore import seeded_rng

log = logging.getLogger(__name__)


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError(f"pred has {pred.size} values, target has {target.size}")
    if pred.size == 0:
        raise ValueError("empty prediction vector")
    return pred, target


def huber_loss(pred, target) -> float:
    pred, target = _pair(pred, target)
    diff = np.abs(pred - target)
    z = np.where(diff < 1.0, 0.5 * diff * diff, diff - 0.5)
    return float(z.mean())


def huber_grad(pred, target) -> np.ndarray:
    pred, target = _pair(pred, target)
    return np.clip(pred - target, -1.0, 1.0) / pred.size


@dataclass
class AdaDeltaState:
    """Running averages of squared gradients and squared updates, per tensor."""

    rho: float = 0.95
    eps: float = 1e-6
    lr_scale: float = 1.0
    sq_grad: dict = field(default_factory=dict)
    sq_delta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def step(self, params: dict, grads: dict) -> dict:
        """Update ``params`` in place and return it."""
        for name, g in grads.items():
            p = params[name]
            if np.shape(g) != p.shape:
                raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, parameter {p.shape}")
            eg = self.sq_grad.get(name)
            if eg is None:
                eg = self.sq_grad[name] = np.zeros_like(p)
                self.sq_delta[name] = np.zeros_like(p)
            ed = self.sq_delta[name]
            eg *= self.rho
            eg += (1.0 - self.rho) * g * g
            delta = -self.lr_scale * np.sqrt(ed + self.eps) / np.sqrt(eg + self.eps) * g
            ed *= self.rho
            ed += (1.0 - self.rho) * delta * delta
            p += delta
        return params


def adadelta_step(state: AdaDeltaState, params: dict, grads: dict) -> tuple[dict, AdaDeltaState]:
    state.step(params, grads)
    return params, state


@dataclass
class TrainConfig:
    batch_size: int = 90
    max_epochs: int = 200
    patience: int | None = 20
    seed: int = 0
    rho: float = 0.95
    eps: float = 1e-6
    lr_scale: float = 1.0
    restore_best: bool = True
    # stop as soon as validation relative error drops below this value
    target_val_error: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class EpochRecord:
    epoch: int
    train_huber: float
    val_rel_err: float


@dataclass
class FitResult:
    params: dict
    history: list
    best_epoch: int

    def history_lines(self) -> list[str]:
        return [f"{r.epoch}, {r.train_huber!r}, {r.val_rel_err!r}" for r in self.history]


def write_history(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch, train_huber, val_rel_err\n")
        for r in history:
            fh.write(f"{r.epoch}, {r.train_huber!r}, {r.val_rel_err!r}\n")


def _identity(v):
    return v


def fit(model, train, val, config: TrainConfig | None = None, denormalize=None) -> FitResult:
    """Train ``model`` on ``train = (X, y)`` with minibatch AdaDelta.

    Each epoch shuffles the training windows with the config seed, walks
    consecutive batches (the last one may be short), averages the Huber
    gradient over the batch and takes one optimizer step per batch.  The
    validation set only feeds the per-epoch relative error, computed after
    ``denormalize`` maps predictions and targets back to flow units.  The
    model is left holding the parameters of the best validation epoch (or the
    last epoch when ``restore_best`` is off).
    """
    config = config or TrainConfig()
    denormalize = denormalize or _identity
    X, y = (np.asarray(a, dtype=np.float64) for a in train)
    Xv, yv = (np.asarray(a, dtype=np.float64) for a in val)
    n = len(X)
    if n == 0:
        raise ValueError("empty training set")
    if len(Xv) == 0:
        raise ValueError("empty validation set")
    if len(y) != n or len(yv) != len(Xv):
        raise ShapeError("inputs and targets differ in length")
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds training-set size {n}")

    rng = seeded_rng(config.seed)
    opt = AdaDeltaState(rho=config.rho, eps=config.eps, lr_scale=config.lr_scale)
    yv_real = denormalize(yv)
    history: list[EpochRecord] = []
    best_err, best_epoch, best_params = np.inf, 0, model.get_params()
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            pred = model.forward(X[idx])
            loss = huber_loss(pred, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            grads = model.backward(huber_grad(pred, y[idx]))
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergence(f"non-finite gradient at epoch {epoch}, batch {b}", epoch, b)
            opt.step(model.params, grads)
            total += loss * len(idx)

        val_err = relative_error(denormalize(model.predict(Xv)), yv_real)
        history.append(EpochRecord(epoch, total / n, val_err))
        log.debug("epoch %d train_huber %.6g val_rel_err %.6g", epoch, total / n, val_err)

        if val_err < best_err:
            best_err, best_epoch, best_params = val_err, epoch, model.get_params()
            stale = 0
        else:
            stale += 1
        if config.target_val_error is not None and val_err < config.target_val_error:
            break
        if config.patience is not None and stale >= config.patience:
            break

    if config.restore_best:
        model.set_params(best_params)
    else:
        best_epoch = history[-1].epoch
    return FitResult(model.get_params(), history, best_epoch)
