"""Daily records: CSV ingestion, z-score normalization, lookback windows,
random 7:1:2 splits and a synthetic catchment generator."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from flowcast.errors import DataError, SchemaError, ShapeError
from flowcast.numcore import derive_rng, seeded_rng

log = logging.getLogger(__name__)

MISSING_TOKENS = {"", "na", "nan", "null", "none", "-"}


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    features: tuple
    flow: float


@dataclass
class Schema:
    """Column mapping: which CSV columns hold the date, the predictors and the flow."""

    date: str = "date"
    features: list = field(default_factory=list)
    target: str = "flow"

    @property
    def columns(self) -> list[str]:
        return [self.date, *self.features, self.target]


def parse_schema(text: str) -> Schema:
    """Parse ``role = column`` lines.  Roles: ``date``, ``target`` and
    ``features`` (comma separated; may be repeated).  ``#`` starts a comment."""
    values: dict[str, str] = {}
    features: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"schema line {lineno}: expected 'role = column', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key in ("features", "feature"):
            features.extend(v.strip() for v in value.split(",") if v.strip())
        elif key in ("date", "target"):
            values[key] = value
        else:
            raise SchemaError(f"schema line {lineno}: unknown role {key!r}")
    for role in ("date", "target"):
        if role not in values:
            raise SchemaError(f"schema is missing the {role!r} role")
    if not features:
        raise SchemaError("schema declares no feature columns")
    return Schema(date=values["date"], features=features, target=values["target"])


def load_schema(path) -> Schema:
    return parse_schema(Path(path).read_text())


def format_schema(schema: Schema) -> str:
    return (
        f"date = {schema.date}\n"
        f"features = {', '.join(schema.features)}\n"
        f"target = {schema.target}\n"
    )


def find_gaps(records) -> list[tuple[dt.date, dt.date]]:
    """Pairs of consecutive records more than one day apart."""
    return [
        (a.date, b.date)
        for a, b in zip(records, records[1:])
        if (b.date - a.date).days > 1
    ]


def load_csv(path, schema: Schema) -> list[DailyRecord]:
    """Read a header-row CSV into date-sorted records.

    Missing cells are an error (no imputation); gaps in the calendar are only
    logged.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in schema.columns:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        pos = {c: header.index(c) for c in schema.columns}
        records, missing = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            cells = {c: (row[pos[c]].strip() if pos[c] < len(row) else "") for c in schema.columns}
            try:
                date = dt.date.fromisoformat(cells[schema.date])
            except ValueError:
                raise DataError(
                    f"{path}: row {rowno}, column {schema.date!r}: bad date {cells[schema.date]!r}"
                ) from None
            values = []
            for col in [*schema.features, schema.target]:
                cell = cells[col]
                if cell.lower() in MISSING_TOKENS:
                    missing.append((date, col))
                    values.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {rowno}, column {col!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {rowno}, column {col!r}: non-finite value {cell!r}")
                values.append(v)
            records.append(DailyRecord(date, tuple(values[:-1]), values[-1]))
    if missing:
        shown = ", ".join(f"{d.isoformat()}:{c}" for d, c in missing[:20])
        raise DataError(f"{path}: {len(missing)} missing values ({shown}{' ...' if len(missing) > 20 else ''})")
    records.sort(key=lambda r: r.date)
    for a, b in zip(records, records[1:]):
        if a.date == b.date:
            raise DataError(f"{path}: duplicate date {a.date.isoformat()}")
    gaps = find_gaps(records)
    if gaps:
        log.warning("%s: %d calendar gaps, first %s -> %s", path, len(gaps), gaps[0][0], gaps[0][1])
    return records


def write_csv(records, path, schema: Schema) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.columns)
        for r in records:
            w.writerow([r.date.isoformat(), *(repr(float(v)) for v in r.features), repr(float(r.flow))])


def records_to_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise ValueError("no records")
    widths = {len(r.features) for r in records}
    if len(widths) != 1:
        raise ShapeError(f"records disagree on feature count: {sorted(widths)}")
    features = np.array([r.features for r in records], dtype=np.float64)
    flow = np.array([r.flow for r in records], dtype=np.float64)
    return features, flow


@dataclass
class NormStats:
    """Population mean/std per feature column and for the target."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    def apply_features(self, features):
        return (np.asarray(features, dtype=np.float64) - self.feature_mean) / self.feature_std

    def apply_target(self, values):
        return (np.asarray(values, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize_target(self, values):
        return np.asarray(values, dtype=np.float64) * self.target_std + self.target_mean

    def to_tensors(self) -> dict:
        return {
            "norm.feature_mean": self.feature_mean,
            "norm.feature_std": self.feature_std,
            "norm.target": np.array([self.target_mean, self.target_std]),
        }

    @classmethod
    def from_tensors(cls, tensors: dict) -> "NormStats":
        t = tensors["norm.target"]
        return cls(tensors["norm.feature_mean"], tensors["norm.feature_std"], float(t[0]), float(t[1]))


def normalize_fit(records, train_indices, names=None) -> NormStats:
    """Fit z-score statistics on the records at ``train_indices`` only."""
    idx = np.asarray(train_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("train_indices is empty")
    features, flow = records_to_arrays(records) if not isinstance(records, tuple) else records
    f, y = features[idx], flow[idx]
    fm, fs = f.mean(axis=0), f.std(axis=0)
    ym, ys = float(y.mean()), float(y.std())
    names = list(names) if names is not None else [f"feature[{j}]" for j in range(f.shape[1])] + ["target"]
    zero = [names[j] for j in np.flatnonzero(fs <= 0)]
    if ys <= 0:
        zero.append(names[-1])
    if zero:
        raise DataError(f"zero variance on training rows for column(s): {', '.join(zero)}")
    return NormStats(fm, fs, ym, ys)


def normalize_apply(records, stats: NormStats) -> list[DailyRecord]:
    features, flow = records_to_arrays(records)
    fz = stats.apply_features(features)
    yz = stats.apply_target(flow)
    return [DailyRecord(r.date, tuple(fz[i]), float(yz[i])) for i, r in enumerate(records)]


def denormalize_target(values, stats: NormStats) -> np.ndarray:
    return stats.denormalize_target(values)


@dataclass
class WindowedDataset:
    """Sample i holds days ``i .. i+L-1`` as X[i] (L x D) and the flow of day
    ``i+L`` as y[i]; ``target_index[i] = i + L``."""

    X: np.ndarray
    y: np.ndarray
    target_index: np.ndarray
    lookback: int

    def __len__(self) -> int:
        return len(self.y)

    def samples(self):
        return list(zip(self.X, self.y))

    def normalized(self, stats: NormStats) -> "WindowedDataset":
        return WindowedDataset(stats.apply_features(self.X), stats.apply_target(self.y),
                               self.target_index, self.lookback)

    def subset(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.X[idx], self.y[idx]


def windows_from_arrays(features, flow, lookback: int) -> WindowedDataset:
    features = np.asarray(features, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    n = len(flow)
    if lookback < 1:
        raise ValueError(f"lookback must be >= 1, got {lookback}")
    if n <= lookback:
        raise ValueError(f"need more than {lookback} records for lookback {lookback}, got {n}")
    X = sliding_window_view(features, (lookback, features.shape[1]))[: n - lookback, 0].copy()
    return WindowedDataset(X, flow[lookback:].copy(), np.arange(lookback, n), lookback)


def make_windows(records, lookback: int) -> WindowedDataset:
    return windows_from_arrays(*records_to_arrays(records), lookback)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.train, self.val, self.test):
            h.update(np.asarray(part, dtype=np.int64).tobytes())
            h.update(b"|")
        return h.hexdigest()[:16]


def split_712(dataset, rng: np.random.Generator | None = None, chronological: bool = False) -> Split:
    """Partition sample indices 70/10/20 (floor, floor, remainder).

    ``dataset`` may be a sample count or anything with ``len``.  The default
    draws a uniform random permutation; ``chronological=True`` keeps time
    order (train first, test last).
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    n_train, n_val = (7 * n) // 10, n // 10
    if chronological:
        perm = np.arange(n)
    else:
        if rng is None:
            raise ValueError("a random split needs an rng")
        perm = rng.permutation(n)
    return Split(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:n_train + n_val]),
        np.sort(perm[n_train + n_val:]),
    )


def repeated_splits(dataset, k: int = 10, master_seed: int = 0, chronological: bool = False) -> list[Split]:
    """``k`` independent 7:1:2 splits; repeat ``r`` draws from ``derive_rng(master_seed, r)``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return [split_712(dataset, derive_rng(master_seed, r), chronological) for r in range(k)]


def fold_stats(records_or_arrays, dataset: WindowedDataset, split: Split, names=None) -> NormStats:
    """Normalization statistics from the target days of training windows only."""
    return normalize_fit(records_or_arrays, dataset.target_index[split.train], names)


def synth_schema(n_features: int) -> Schema:
    names = []
    for j in range(n_features):
        station = j // 2 + 1
        names.append(f"precip_{station}" if j % 2 == 0 else f"temp_{station}")
    return Schema(date="date", features=names, target="flow")


# runoff response of flow to rain k days earlier, k = 1..5
RAIN_RESPONSE = (0.30, 0.20, 0.10, 0.05, 0.02)


def synth_generate(
    n_days: int,
    n_features: int = 2,
    seed: int = 0,
    noise: float = 0.05,
    start: dt.date = dt.date(1983, 1, 1),
) -> list[DailyRecord]:
    """Synthetic catchment series.

    Even feature columns are daily precipitation (mm) at a station, odd
    columns temperature (deg C).  Rain is intermittent with a summer-monsoon
    peak; temperature is a seasonal sinusoid plus noise.  Flow is a baseflow
    plus a lagged linear response to the station-mean rain of the previous
    five days plus a small temperature term, times log-normal noise of
    scale ``noise`` (``noise=0`` gives an exactly lag-linear series).
    """
    if n_days < 30:
        raise ValueError(f"n_days must be >= 30, got {n_days}")
    if n_features < 1:
        raise ValueError("need at least one feature")
    rng = seeded_rng(seed)
    burn = len(RAIN_RESPONSE)
    total = n_days + burn
    days = [start + dt.timedelta(days=i - burn) for i in range(total)]
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=np.float64)

    wet = 0.08 + 0.42 * np.clip(np.sin(2 * np.pi * (doy - 150) / 365.25), 0.0, None) ** 2
    event = rng.random(total) < wet
    feats = np.empty((total, n_features))
    n_rain = (n_features + 1) // 2
    for j in range(n_features):
        station = j // 2
        if j % 2 == 0:
            local = (event & (rng.random(total) < 0.85)) | (rng.random(total) < 0.03)
            feats[:, j] = np.where(local, rng.gamma(0.9, 9.0 + 2.0 * station, total), 0.0)
        else:
            feats[:, j] = 16.0 + 10.0 * np.sin(2 * np.pi * (doy - 110) / 365.25) - 1.5 * station \
                + rng.normal(0.0, 1.5, total)

    rain = feats[:, 0::2].sum(axis=1) / n_rain
    flow = np.full(total, 3.0)
    for k, a in enumerate(RAIN_RESPONSE, start=1):
        flow[k:] += a * rain[:-k]
    if n_features > 1:
        flow[1:] += 0.05 * (feats[:-1, 1] + 10.0)
    eps = rng.normal(0.0, 1.0, total)
    if noise > 0:
        flow *= np.exp(noise * eps)

    return [
        DailyRecord(days[i], tuple(float(v) for v in feats[i]), float(flow[i]))
        for i in range(burn, total)
    ]
