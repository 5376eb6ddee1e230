"""Dense matrix helpers and seeded random streams.

Matrices are plain ``numpy.ndarray`` objects in float64, row-major (C order),
with rows as time steps/days and columns as features.

Random streams use numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence``.  PCG64 output is specified by its algorithm and
does not depend on platform, so a seed reproduces the same stream everywhere.
Child streams are derived by appending integer keys to the seed entropy, e.g.
``derive_rng(seed, repeat_index, tree_index)``.
"""

from __future__ import annotations

import numpy as np

from flowcast.errors import ShapeError

_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def as_matrix(a) -> np.ndarray:
    m = np.array(a, dtype=np.float64, order="C")
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def elementwise(a, b, op: str) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return fn(a, b)


def seeded_rng(seed: int) -> np.random.Generator:
    """Generator over PCG64 seeded with a 64-bit unsigned integer."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent child stream for ``(seed, *keys)``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seed and keys must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def uniform_init(rng: np.random.Generator, rows: int, cols: int, bound: float) -> np.ndarray:
    if not bound > 0:
        raise ValueError(f"bound must be positive, got {bound}")
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be positive, got {rows}x{cols}")
    return rng.uniform(-bound, bound, size=(rows, cols))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit integer seed for ``(seed, *keys)``, for APIs that take an int."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
