"""Time-indexed record of an evolution and its CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import RateHistory
from .measures import GridDensity

__all__ = ["Trajectory", "format_value", "write_csv"]


def format_value(v) -> str:
    """Locale-free rendering with 17 significant digits."""
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_csv(header: Sequence[str], rows, path=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(list(header))
    for row in rows:
        wr.writerow([format_value(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "x", encoding="ascii", newline="") as fh:
            fh.write(text)
    return text


@dataclass
class Trajectory:
    """Accepted time steps of an evolution.

    ``columns`` holds per-step diagnostic scalars aligned with ``times``;
    ``snapshots`` holds ``(t, GridDensity)`` pairs at selected times.
    """

    times: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    dlam_dt: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def record(self, t: float, lam: float, rate: float, **diag) -> None:
        n = len(self.times)
        self.times.append(float(t))
        self.lam.append(float(lam))
        self.dlam_dt.append(float(rate))
        for k, v in diag.items():
            col = self.columns.setdefault(k, [math.nan] * n)
            col.append(float(v))
        for k, col in self.columns.items():
            if len(col) < n + 1:
                col.append(math.nan)

    def snapshot(self, t: float, density: GridDensity) -> None:
        self.snapshots.append((float(t), density))

    def __len__(self) -> int:
        return len(self.times)

    def array(self, name: str) -> np.ndarray:
        if name == "t":
            return np.asarray(self.times)
        if name == "Lambda":
            return np.asarray(self.lam)
        if name == "dLambda_dt":
            return np.asarray(self.dlam_dt)
        return np.asarray(self.columns[name])

    def history(self) -> RateHistory:
        return RateHistory(np.asarray(self.times), np.asarray(self.lam))

    def to_csv(self, columns: Sequence[str], path=None) -> str:
        data = [self.array(c) for c in columns]
        return write_csv(columns, zip(*data), path)
