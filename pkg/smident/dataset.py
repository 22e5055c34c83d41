from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from smident.errors import DataError
from smident.lti_sim import IORecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressorLayout:
    """Regressor [y(k)..y(k-o+1), u(k+p-1)..u(k-o+1)] for order o and horizon p."""

    o: int
    p: int

    def __post_init__(self) -> None:
        if self.o < 1 or self.p < 1:
            raise DataError(f"Order and horizon must be >= 1 (got o={self.o}, p={self.p}).")

    @property
    def dim(self) -> int:
        return 2 * self.o + self.p - 1

    @property
    def y_slice(self) -> slice:
        return slice(0, self.o)

    @property
    def u_slice(self) -> slice:
        return slice(self.o, self.dim)

    @property
    def n_u(self) -> int:
        return self.o + self.p - 1

    def column_names(self) -> list[str]:
        ys = ["y(k)"] + [f"y(k-{i})" for i in range(1, self.o)]
        us = []
        for lag in range(self.p - 1, -self.o, -1):
            if lag > 0:
                us.append(f"u(k+{lag})")
            elif lag == 0:
                us.append("u(k)")
            else:
                us.append(f"u(k{lag})")
        return ys + us


@dataclass(frozen=True)
class SampleSet:
    layout: RegressorLayout
    rows: np.ndarray
    targets: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.targets.size)

    @property
    def output_scale(self) -> float:
        return float(np.max(np.abs(self.targets))) if self.targets.size else 0.0

    def subset(self, mask_or_index: np.ndarray) -> SampleSet:
        return SampleSet(
            layout=self.layout,
            rows=self.rows[mask_or_index],
            targets=self.targets[mask_or_index],
            indices=self.indices[mask_or_index],
        )


def regressor(y: np.ndarray, u: np.ndarray, k: int, layout: RegressorLayout) -> np.ndarray:
    o, p = layout.o, layout.p
    ys = y[k - o + 1 : k + 1][::-1]
    us = u[k - o + 1 : k + p][::-1]
    return np.concatenate([ys, us])


def build_sample_set(io: IORecord, o: int, p: int) -> SampleSet:
    layout = RegressorLayout(o, p)
    n = len(io)
    if n < o + p:
        raise DataError(f"Record of {n} samples is too short for o={o}, p={p} (need >= {o + p}).")
    # admissible k: full output history (k >= o-1) and a measured target y(k+p)
    ks = np.arange(o - 1, n - p)
    y_lags = np.lib.stride_tricks.sliding_window_view(io.y, o)[: ks.size][:, ::-1]
    u_lags = np.lib.stride_tricks.sliding_window_view(io.u, o + p - 1)[: ks.size][:, ::-1]
    rows = np.ascontiguousarray(np.hstack([y_lags, u_lags]))
    targets = io.y[ks + p].copy()
    rows.setflags(write=False)
    targets.setflags(write=False)
    ks.setflags(write=False)
    return SampleSet(layout=layout, rows=rows, targets=targets, indices=ks)


def split(io: IORecord, n_id: int, n_val: int) -> tuple[IORecord, IORecord]:
    if n_id < 0 or n_val < 0:
        raise DataError("Segment lengths must be nonnegative.")
    if n_id + n_val > len(io):
        raise DataError(f"Requested {n_id} + {n_val} samples but the record holds {len(io)}.")
    ident = io.segment(0, n_id)
    valid = io.segment(n_id, n_id + n_val)
    return ident, valid


def export_sample_set(sample_set: SampleSet, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(sample_set.rows, columns=sample_set.layout.column_names())
    frame.insert(0, "k", sample_set.indices)
    frame["target"] = sample_set.targets
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.debug("Exported sample set o=%d p=%d to %s", sample_set.layout.o, sample_set.layout.p, path)
    return path
