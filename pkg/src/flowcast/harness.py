"""Model comparison over repeated random splits, lookback sweeps and model files."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from flowcast import serialize
from flowcast.baselines import Ensemble, LinearModel, flatten_windows, gbr_fit, ols_fit, rf_fit
from flowcast.convnet import CnnModel
from flowcast.datapipe import (
    NormStats,
    Split,
    WindowedDataset,
    fold_stats,
    records_to_arrays,
    repeated_splits,
    windows_from_arrays,
)
from flowcast.errors import DataError
from flowcast.metrics import relative_error
from flowcast.numcore import derive_seed
from flowcast.recurrent import LstmNetwork
from flowcast.training import TrainConfig, fit

log = logging.getLogger(__name__)

MODEL_KINDS = ("lr", "gbr", "rf", "cnn", "lstm")
DISPLAY_NAMES = {"lr": "LR", "gbr": "GBR", "rf": "RF", "cnn": "CNN", "lstm": "LSTM"}

__all__ = [
    "MODEL_KINDS", "ExperimentConfig", "EvalReport", "FittedModel", "Fold",
    "compare_all", "evaluate_model", "fit_model", "lookback_sweep", "prepare_fold",
    "relative_error",
]


@dataclass
class CnnConfig:
    kernel_heights: tuple = (3, 5, 7)
    channels_per_height: int = 100
    conv_stride: int = 1


@dataclass
class LstmConfig:
    hidden_size: int = 150
    n_layers: int = 1
    bidirectional: bool = True


@dataclass
class GbrConfig:
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3


@dataclass
class RfConfig:
    n_trees: int = 100
    max_features: int | None = None
    bootstrap: bool = True


@dataclass
class ExperimentConfig:
    lookback: int = 7
    chronological: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    gbr: GbrConfig = field(default_factory=GbrConfig)
    rf: RfConfig = field(default_factory=RfConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        cnn = dict(d.pop("cnn", {}))
        if "kernel_heights" in cnn:
            cnn["kernel_heights"] = tuple(cnn["kernel_heights"])
        return cls(
            train=TrainConfig(**d.pop("train", {})),
            cnn=CnnConfig(**cnn),
            lstm=LstmConfig(**d.pop("lstm", {})),
            gbr=GbrConfig(**d.pop("gbr", {})),
            rf=RfConfig(**d.pop("rf", {})),
            **d,
        )


def dataset_digest(features, flow) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(features, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(flow, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def _arrays(dataset):
    if isinstance(dataset, tuple):
        features, flow = dataset
        return np.asarray(features, dtype=np.float64), np.asarray(flow, dtype=np.float64)
    return records_to_arrays(dataset)


@dataclass
class Fold:
    """One split of a windowed series: raw windows, training-only statistics
    and the normalized windows."""

    raw: WindowedDataset
    split: Split
    stats: NormStats
    norm: WindowedDataset

    def part(self, name: str, normalized: bool = True):
        idx = getattr(self.split, name)
        return (self.norm if normalized else self.raw).subset(idx)


def prepare_fold(dataset, lookback: int, split: Split, windows: WindowedDataset | None = None) -> Fold:
    features, flow = _arrays(dataset)
    raw = windows if windows is not None else windows_from_arrays(features, flow, lookback)
    stats = fold_stats((features, flow), raw, split)
    return Fold(raw, split, stats, raw.normalized(stats))


@dataclass
class FittedModel:
    """A trained model plus what is needed to score raw windows."""

    kind: str
    model: object
    stats: NormStats
    lookback: int
    history: list = field(default_factory=list)

    def predict(self, X_raw) -> np.ndarray:
        """Flow predictions in original units for raw (B, L, D) windows."""
        Xn = self.stats.apply_features(X_raw)
        if self.kind in ("cnn", "lstm"):
            yn = self.model.predict(Xn)
        else:
            yn = self.model.predict(flatten_windows(Xn))
        return self.stats.denormalize_target(yn)

    def to_records(self) -> tuple[dict, dict]:
        meta = {"kind": self.kind, "lookback": self.lookback}
        tensors = dict(self.stats.to_tensors())
        if self.kind in ("cnn", "lstm"):
            m_meta, params = self.model.to_records()
            meta.update(m_meta)
            tensors.update({f"param.{k}": v for k, v in params.items()})
        elif self.kind == "lr":
            meta["ridge"] = int(self.model.ridge)
            tensors["lr.weights"] = self.model.weights
            tensors["lr.intercept"] = np.array([self.model.intercept])
        else:
            meta.update(self.model.to_meta())
            tensors.update(self.model.to_tensors())
        return meta, tensors

    def save(self, path) -> None:
        serialize.save_records(path, *self.to_records())

    @classmethod
    def load(cls, path) -> "FittedModel":
        meta, tensors = serialize.load_records(path)
        try:
            kind = meta["kind"]
            lookback = int(meta["lookback"])
        except KeyError as exc:
            raise DataError(f"{path}: model file lacks {exc.args[0]!r}") from None
        stats = NormStats.from_tensors(tensors)
        if kind in ("cnn", "lstm"):
            params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
            model = (CnnModel if kind == "cnn" else LstmNetwork).from_records(meta, params)
        elif kind == "lr":
            model = LinearModel(tensors["lr.weights"], float(tensors["lr.intercept"][0]), bool(int(meta["ridge"])))
        elif kind in ("gbr", "rf"):
            model = Ensemble.from_records(meta, tensors)
        else:
            raise DataError(f"{path}: unknown model kind {kind!r}")
        return cls(kind, model, stats, lookback)


def fit_model(kind: str, fold: Fold, config: ExperimentConfig, seed: int = 0) -> FittedModel:
    """Fit one model kind on the fold's training windows.

    Neural models also see the validation windows for best-epoch selection;
    classical models use training windows only.
    """
    Xtr, ytr = fold.part("train")
    n_features = Xtr.shape[2]
    if kind == "lr":
        model = ols_fit(flatten_windows(Xtr), ytr)
    elif kind == "gbr":
        g = config.gbr
        model = gbr_fit(flatten_windows(Xtr), ytr, g.n_trees, g.learning_rate, g.max_depth)
    elif kind == "rf":
        r = config.rf
        model = rf_fit(flatten_windows(Xtr), ytr, r.n_trees, r.max_features, r.bootstrap, seed=seed)
    elif kind in ("cnn", "lstm"):
        if kind == "cnn":
            c = config.cnn
            model = CnnModel(n_features, c.kernel_heights, c.channels_per_height, c.conv_stride,
                             lookback=fold.raw.lookback, seed=derive_seed(seed, 0))
        else:
            c = config.lstm
            model = LstmNetwork(n_features, c.hidden_size, c.n_layers, c.bidirectional,
                                seed=derive_seed(seed, 0))
        tc = TrainConfig(**{**asdict(config.train), "seed": derive_seed(seed, 1)})
        tc.batch_size = min(tc.batch_size, len(ytr))
        result = fit(model, (Xtr, ytr), fold.part("val"), tc, denormalize=fold.stats.denormalize_target)
        return FittedModel(kind, model, fold.stats, fold.raw.lookback, result.history)
    else:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return FittedModel(kind, model, fold.stats, fold.raw.lookback)


def evaluate_model(model_kind, dataset, split: Split, config: ExperimentConfig | None = None,
                   seed: int = 0, windows: WindowedDataset | None = None) -> float:
    """Relative error on the split's test windows, in original flow units.

    ``model_kind`` is a name from :data:`MODEL_KINDS` or a callable
    ``fn(fold) -> predictions`` for the test windows (original units).
    """
    config = config or ExperimentConfig()
    fold = prepare_fold(dataset, config.lookback, split, windows)
    Xte, yte = fold.part("test", normalized=False)
    if callable(model_kind):
        pred = model_kind(fold)
    else:
        pred = fit_model(model_kind, fold, config, seed).predict(Xte)
    return relative_error(pred, yte)


def _std(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1)) if len(values) > 1 else 0.0


@dataclass
class EvalReport:
    """Per-model relative errors (in percent) for every repeat, plus run metadata."""

    per_repeat: dict
    meta: dict
    split_digests: dict = field(default_factory=dict)

    def mean(self, kind: str) -> float:
        return float(np.mean(self.per_repeat[kind]))

    def std(self, kind: str) -> float:
        return _std(self.per_repeat[kind])

    @property
    def models(self) -> list[str]:
        return [k for k in MODEL_KINDS if k in self.per_repeat] + \
            [k for k in self.per_repeat if k not in MODEL_KINDS]

    def rows(self) -> list[tuple[str, float, float]]:
        return [(DISPLAY_NAMES.get(k, k), self.mean(k), self.std(k)) for k in self.models]

    def to_table(self) -> str:
        head = ("Model", "Mean Relative Error(%)", "Standard Deviation")
        body = [(name, f"{m:.4f}", f"{s:.4f}") for name, m, s in self.rows()]
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(3)]
        fmt = lambda r: "| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"
        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([fmt(head), rule, *(fmt(r) for r in body)]) + "\n"

    def to_kv(self) -> str:
        lines = [f"meta.{k} = {v}" for k, v in self.meta.items()]
        for k in self.models:
            name = DISPLAY_NAMES.get(k, k)
            lines.append(f"{name}.mean = {self.mean(k)!r}")
            lines.append(f"{name}.std = {self.std(k)!r}")
            lines += [f"{name}.repeat.{r} = {v!r}" for r, v in enumerate(self.per_repeat[k])]
            if k in self.split_digests:
                lines += [f"{name}.split.{r} = {d}" for r, d in enumerate(self.split_digests[k])]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str) -> "EvalReport":
        by_name = {v: k for k, v in DISPLAY_NAMES.items()}
        meta, per_repeat, digests = {}, {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, value = (s.strip() for s in line.split("=", 1))
            parts = key.split(".")
            if parts[0] == "meta":
                meta[".".join(parts[1:])] = value
                continue
            kind = by_name.get(parts[0], parts[0])
            if parts[1] == "repeat":
                per_repeat.setdefault(kind, {})[int(parts[2])] = float(value)
            elif parts[1] == "split":
                digests.setdefault(kind, {})[int(parts[2])] = value
        return cls(
            {k: [v[i] for i in sorted(v)] for k, v in per_repeat.items()},
            meta,
            {k: [v[i] for i in sorted(v)] for k, v in digests.items()},
        )


def compare_all(dataset, k: int = 10, seed: int = 0, config: ExperimentConfig | None = None,
                models=MODEL_KINDS, dataset_id: str | None = None) -> EvalReport:
    """Score every model on the same ``k`` random 7:1:2 splits.

    Repeat ``r`` of model number ``m`` (position in :data:`MODEL_KINDS`)
    seeds its initialisation and shuffling from ``(seed, r, m)``.
    """
    config = config or ExperimentConfig()
    features, flow = _arrays(dataset)
    windows = windows_from_arrays(features, flow, config.lookback)
    splits = repeated_splits(windows, k, seed, config.chronological)
    per_repeat = {m: [] for m in models}
    digests = {m: [] for m in models}
    for r, split in enumerate(splits):
        fold = prepare_fold((features, flow), config.lookback, split, windows)
        Xte, yte = fold.part("test", normalized=False)
        for m in models:
            cell_seed = derive_seed(seed, r, MODEL_KINDS.index(m) if m in MODEL_KINDS else len(MODEL_KINDS))
            try:
                pred = fit_model(m, fold, config, cell_seed).predict(Xte)
                err = relative_error(pred, yte)
            except Exception as exc:
                raise type(exc)(f"model {DISPLAY_NAMES.get(m, m)} failed on repeat {r}: {exc}") from exc
            log.info("repeat %d %s relative error %.4f%%", r, m, 100 * err)
            per_repeat[m].append(100.0 * err)
            digests[m].append(split.digest())
    meta = {
        "seed": seed,
        "lookback": config.lookback,
        "repeats": k,
        "dataset_id": dataset_id or dataset_digest(features, flow),
        "config_hash": config.digest(),
        "config": json.dumps(config.to_dict(), sort_keys=True, default=list),
    }
    return EvalReport(per_repeat, meta, digests)


def lookback_sweep(dataset, lookbacks, model_kind: str = "lstm", seed: int = 0,
                   config: ExperimentConfig | None = None, k: int = 10) -> list[tuple[int, float]]:
    """Mean test relative error (percent) per lookback, all under the same seed."""
    config = config or ExperimentConfig()
    features, flow = _arrays(dataset)
    lookbacks = [int(L) for L in lookbacks]
    if not lookbacks:
        raise ValueError("empty lookback grid")
    for L in lookbacks:
        if L < 1 or len(flow) - L < 10:
            raise ValueError(f"lookback {L} leaves fewer than 10 windows from {len(flow)} records")
    out = []
    for L in lookbacks:
        cfg = ExperimentConfig.from_dict({**config.to_dict(), "lookback": L})
        if model_kind == "cnn" and L < max(cfg.cnn.kernel_heights):
            cfg.cnn.kernel_heights = tuple(h for h in cfg.cnn.kernel_heights if h <= L) or (L,)
        report = compare_all((features, flow), k, seed, cfg, models=(model_kind,))
        out.append((L, report.mean(model_kind)))
    return out


def best_lookback(series) -> int:
    return min(series, key=lambda pair: (pair[1], pair[0]))[0]


def format_sweep(series) -> str:
    lines = ["lookback,mean_relative_error"]
    lines += [f"{L},{err!r}" for L, err in series]
    return "\n".join(lines) + "\n"

