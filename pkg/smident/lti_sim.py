"""Benchmark data generation: ZOH discretization, random step inputs, bounded noise."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy import signal
from scipy.linalg import expm

from smident.errors import DataError

logger = logging.getLogger(__name__)

Seed = int | np.random.SeedSequence | None

STABILITY_MARGIN = 1e-12
HOLD_TOL = 1e-9


def _frozen(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContinuousTF:
    num: tuple[float, ...]
    den: tuple[float, ...]
    allow_marginal: bool = False

    def __post_init__(self) -> None:
        num = np.trim_zeros(np.asarray(self.num, dtype=float), "f")
        den = np.asarray(self.den, dtype=float)
        if den.size == 0 or den[0] == 0.0:
            raise DataError("Denominator leading coefficient must be nonzero.")
        if num.size == 0:
            raise DataError("Numerator is identically zero.")
        if num.size >= den.size:
            raise DataError(
                f"Transfer function is not strictly proper (deg num={num.size - 1}, deg den={den.size - 1})."
            )
        object.__setattr__(self, "num", tuple(float(v) for v in num))
        object.__setattr__(self, "den", tuple(float(v) for v in den))
        poles = self.poles
        limit = STABILITY_MARGIN if self.allow_marginal else -STABILITY_MARGIN
        if poles.size and np.max(poles.real) >= limit:
            raise DataError(f"Transfer function is not asymptotically stable; poles={np.round(poles, 6).tolist()}")

    @property
    def order(self) -> int:
        return len(self.den) - 1

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    @property
    def dc_gain(self) -> float:
        return float(np.polyval(self.num, 0.0) / np.polyval(self.den, 0.0))


@dataclass(frozen=True)
class DiscreteSS:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    ts: float
    allow_marginal: bool = False

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1, 1)
        C = np.asarray(self.C, dtype=float).reshape(1, -1)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise DataError(f"Inconsistent state-space dimensions: A{A.shape}, B{B.shape}, C{C.shape}")
        if self.ts <= 0:
            raise DataError("Sample time must be positive.")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))
        limit = 1.0 + STABILITY_MARGIN if self.allow_marginal else 1.0
        if self.spectral_radius >= limit:
            raise DataError(f"Discrete system is not asymptotically stable (spectral radius {self.spectral_radius:.6f}).")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class IORecord:
    u: np.ndarray
    y: np.ndarray
    ts: float
    z: np.ndarray | None = None
    seed: int | None = None
    dbar0: float | None = None
    tf_num: tuple[float, ...] | None = None
    tf_den: tuple[float, ...] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", _frozen(self.u).ravel())
        object.__setattr__(self, "y", _frozen(self.y).ravel())
        if self.u.shape != self.y.shape:
            raise DataError(f"u and y lengths differ: {self.u.size} vs {self.y.size}")
        if self.z is not None:
            object.__setattr__(self, "z", _frozen(self.z).ravel())
            if self.z.shape != self.y.shape:
                raise DataError(f"z and y lengths differ: {self.z.size} vs {self.y.size}")
            slack = 1e-12 * np.maximum(1.0, np.abs(self.z))
            if self.dbar0 is not None and np.any(np.abs(self.y - self.z) > self.dbar0 + slack):
                raise DataError("Measured output violates the generating noise bound.")

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def has_truth(self) -> bool:
        return self.z is not None

    @property
    def truth(self) -> np.ndarray:
        """Noise-free output when known, else the measured one."""
        return self.z if self.z is not None else self.y

    def segment(self, start: int, stop: int) -> IORecord:
        return IORecord(
            u=self.u[start:stop],
            y=self.y[start:stop],
            z=None if self.z is None else self.z[start:stop],
            ts=self.ts,
            seed=self.seed,
            dbar0=self.dbar0,
            tf_num=self.tf_num,
            tf_den=self.tf_den,
            meta={**self.meta, "offset": int(self.meta.get("offset", 0)) + start},
        )


def discretize_zoh(tf: ContinuousTF, ts: float) -> DiscreteSS:
    if ts <= 0:
        raise DataError("Sample time must be positive.")
    A, B, C, D = signal.tf2ss(tf.num, tf.den)
    n = A.shape[0]
    # exp([[A, B], [0, 0]] Ts) = [[Ad, Bd], [0, I]]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n:] = B
    Md = expm(M * ts)
    logger.debug("ZOH discretization of order %d at Ts=%g", n, ts)
    return DiscreteSS(A=Md[:n, :n], B=Md[:n, n:], C=C, ts=ts, allow_marginal=tf.allow_marginal)


def settling_time(tf: ContinuousTF) -> float:
    slowest = float(np.min(np.abs(tf.poles.real)))
    if slowest <= 0:
        return math.inf
    return 5.0 / slowest


def random_step_input(levels: Sequence[float], hold: float, length: int, ts: float, seed: Seed = None) -> np.ndarray:
    if length < 0:
        raise DataError("Input length must be nonnegative.")
    ratio = hold / ts
    hold_samples = int(round(ratio))
    if hold_samples < 1 or abs(ratio - hold_samples) > HOLD_TOL * max(1.0, ratio):
        raise DataError(f"Hold time {hold} is not an integer multiple of Ts={ts}.")
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise DataError("At least one input level is required.")
    rng = np.random.default_rng(seed)
    windows = -(-length // hold_samples)
    values = rng.choice(levels, size=windows)
    return np.repeat(values, hold_samples)[:length]


def simulate(ss: DiscreteSS, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise DataError("Input must be a 1-D sequence (SISO).")
    x = np.zeros(ss.n) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x.size != ss.n:
        raise DataError(f"Initial state has {x.size} entries, system order is {ss.n}.")
    if u.size == 0:
        return np.zeros(0)
    _, z, _ = signal.dlsim((ss.A, ss.B, ss.C, np.zeros((1, 1)), ss.ts), u, x0=x)
    return np.asarray(z, dtype=float).ravel()


def add_noise(z: np.ndarray, dbar0: float, seed: Seed = None) -> np.ndarray:
    if dbar0 < 0:
        raise DataError("Noise amplitude must be nonnegative.")
    z = np.asarray(z, dtype=float)
    if dbar0 == 0:
        return z.copy()
    rng = np.random.default_rng(seed)
    return z + rng.uniform(-dbar0, dbar0, size=z.shape)


def generate_record(
    tf: ContinuousTF,
    ts: float,
    length: int,
    levels: Sequence[float],
    hold: float,
    dbar0: float,
    seed: int,
    warmup: int | None = None,
) -> IORecord:
    """Simulate the benchmark experiment and drop the warm-up prefix."""
    if warmup is None:
        warmup = int(math.ceil(2.0 * settling_time(tf) / ts))
    input_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    ss = discretize_zoh(tf, ts)
    u = random_step_input(levels, hold, warmup + length, ts, input_seed)
    z = simulate(ss, u)
    y = add_noise(z, dbar0, noise_seed)
    logger.info("Generated %d samples (warm-up %d discarded, spectral radius %.4f)", length, warmup, ss.spectral_radius)
    return IORecord(
        u=u[warmup:],
        z=z[warmup:],
        y=y[warmup:],
        ts=ts,
        seed=seed,
        dbar0=dbar0,
        tf_num=tf.num,
        tf_den=tf.den,
        meta={"warmup": warmup},
    )


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_record(io: IORecord, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "k": np.arange(len(io)),
            "u": io.u,
            "z": io.z if io.z is not None else np.full(len(io), np.nan),
            "y": io.y,
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    sidecar = {
        "Ts": io.ts,
        "seed": io.seed,
        "dbar0": io.dbar0,
        "tf_num": list(io.tf_num) if io.tf_num else None,
        "tf_den": list(io.tf_den) if io.tf_den else None,
        "meta": io.meta,
    }
    _sidecar(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_record(path: Path) -> IORecord:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Record not found at {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    meta: dict[str, Any] = {}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
    z = frame["z"].to_numpy(dtype=float) if "z" in frame.columns else None
    if z is not None and np.isnan(z).all():
        z = None
    return IORecord(
        u=frame["u"].to_numpy(dtype=float),
        y=frame["y"].to_numpy(dtype=float),
        z=z,
        ts=float(meta.get("Ts", 1.0)),
        seed=meta.get("seed"),
        dbar0=meta.get("dbar0"),
        tf_num=tuple(meta["tf_num"]) if meta.get("tf_num") else None,
        tf_den=tuple(meta["tf_den"]) if meta.get("tf_den") else None,
        meta=meta.get("meta", {}),
    )


def load_external_csv(path: Path, ts: float) -> IORecord:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"External data file not found at {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"k", "u", "y"} - set(frame.columns)
    if missing:
        raise DataError(f"External data is missing columns: {sorted(missing)}")
    frame = frame.sort_values("k")
    for col in ("u", "y"):
        frame[col] = pd.to_numeric(frame[col], errors="coerce")
    if frame[["u", "y"]].isna().any().any():
        raise DataError("External data contains non-numeric or missing u/y values.")
    return IORecord(u=frame["u"].to_numpy(), y=frame["y"].to_numpy(), ts=ts, meta={"source": str(path)})
