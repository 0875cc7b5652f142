"""Dataset writers shared by the sweeps, simulator and command line.

CSV dialect: comma separated, '.' decimal, one header row, every number in
scientific notation with 12 significant digits.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FLOAT_FORMAT = "{:.11e}"


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FORMAT.format(x)


def csv_text(header: Sequence[str], columns: Sequence[Iterable]) -> str:
    cols = [np.asarray(c) for c in columns]
    if len(cols) != len(header):
        raise ValueError("header and columns differ in length")
    n = {c.shape[0] for c in cols}
    if len(n) > 1:
        raise ValueError(f"columns have unequal lengths {sorted(n)}")
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path: str | Path, header: Sequence[str], columns: Sequence[Iterable]) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, columns), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


def summary_text(values: Mapping[str, object]) -> str:
    """Flat ``key = value`` document, one entry per line, keys in insertion order."""
    out = []
    for key, value in values.items():
        if isinstance(value, str):
            text = value
        elif value is None:
            text = "none"
        else:
            text = format_number(value)
        out.append(f"{key} = {text}")
    return "\n".join(out) + "\n"


def write_summary(path: str | Path, values: Mapping[str, object]) -> Path:
    path = Path(path)
    path.write_text(summary_text(values), encoding="utf-8")
    return path


def read_summary(path: str | Path) -> dict[str, str]:
    result = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            result[key] = value
    return result
