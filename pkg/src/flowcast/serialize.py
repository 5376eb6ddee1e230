"""Flat text records for model parameters.

One record per line, tab separated::

    # flowcast records v1
    meta    <key>    <value>
    tensor  <name>   <shape>   <v0 v1 v2 ...>

``shape`` is the dimension list joined by ``x`` (``100x3x4``; ``1`` for a
single value).  Values are written row-major in shortest round-trip decimal
form (Python ``repr``), so a dump/load cycle is bit exact.  CNN, LSTM, linear
and tree-ensemble models all use this layout; trees are stored as preorder
node arrays (see :mod:`flowcast.baselines`).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from flowcast.errors import DataError

HEADER = "# flowcast records v1"


def format_records(meta: dict, tensors: dict) -> str:
    lines = [HEADER]
    for key, value in meta.items():
        value = str(value)
        if "\t" in key or "\t" in value or "\n" in value:
            raise ValueError(f"meta entry {key!r} contains a tab or newline")
        lines.append(f"meta\t{key}\t{value}")
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "1"
        values = " ".join(repr(float(v)) for v in arr.ravel(order="C"))
        lines.append(f"tensor\t{name}\t{shape}\t{values}")
    return "\n".join(lines) + "\n"


def parse_records(text: str) -> tuple[dict, dict]:
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        kind = parts[0]
        if kind == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
        elif kind == "tensor" and len(parts) in (3, 4):
            name, shape_txt = parts[1], parts[2]
            values_txt = parts[3] if len(parts) == 4 else ""
            try:
                shape = tuple(int(d) for d in shape_txt.split("x"))
                values = np.array([float(v) for v in values_txt.split()], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"line {lineno}: bad tensor record for {name!r}: {exc}") from None
            if values.size != int(np.prod(shape)):
                raise DataError(
                    f"line {lineno}: tensor {name!r} declares shape {shape} "
                    f"but has {values.size} values"
                )
            tensors[name] = values.reshape(shape)
        else:
            raise DataError(f"line {lineno}: unrecognised record {line[:40]!r}")
    return meta, tensors


def save_records(path, meta: dict, tensors: dict) -> None:
    Path(path).write_text(format_records(meta, tensors))


def load_records(path) -> tuple[dict, dict]:
    return parse_records(Path(path).read_text())
