"""Data-driven estimation of the noise bound, model order and parameter decay envelope."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar

from smident.dataset import build_sample_set
from smident.errors import DataError, EmptySetError, NumericalError, ProcedureError
from smident.lti_sim import IORecord
from smident.polytope_lp import DEFAULT_OMEGA, DEFAULT_TOL, LPTolerances, Polytope, solve_lp_batch
from smident.sm_bounds import ZeroTolerance, is_zero, minimax_residual

logger = logging.getLogger(__name__)


@dataclass
class ProcedureTrace:
    kind: str
    grid: list[float]
    lambdas: dict[float, np.ndarray]
    decision: float
    pbar: int
    note: str = ""

    def __post_init__(self) -> None:
        if self.decision not in self.grid:
            raise ProcedureError(f"Decision {self.decision} is not among the tried {self.kind} values.")
        if self.pbar < 1:
            raise ProcedureError(f"pbar must be >= 1, got {self.pbar}.")

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for value in self.grid:
            lam = self.lambdas[value]
            frames.append(pd.DataFrame({self.kind: value, "p": np.arange(1, lam.size + 1), "lambda": lam}))
        frame = pd.concat(frames, ignore_index=True)
        frame["selected"] = frame[self.kind] == self.decision
        return frame

    def export(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.12g")
        return path


class ResidualProfiles:
    """Minimax residuals mu_p(o) of one record, computed once per (o, p).

    lambda_underbar at any dbar follows as max(0, mu_p - dbar), so the
    procedures never re-solve an LP when they move along a grid.
    """

    def __init__(
        self,
        io: IORecord,
        omega: float = DEFAULT_OMEGA,
        tol: LPTolerances = DEFAULT_TOL,
        n_jobs: int = 1,
    ) -> None:
        self.io = io
        self.omega = omega
        self.tol = tol
        self.n_jobs = n_jobs
        self._mu: dict[tuple[int, int], float] = {}

    @property
    def output_scale(self) -> float:
        return float(np.max(np.abs(self.io.y))) if len(self.io) else 0.0

    def mu(self, o: int, p_max: int) -> np.ndarray:
        missing = [p for p in range(1, p_max + 1) if (p, o) not in self._mu]
        if missing:
            if len(self.io) < o + p_max + 1:
                raise DataError(f"Record of {len(self.io)} samples is too short for o={o}, p_max={p_max}.")
            logger.info("Solving %d minimax LPs for o=%d ...", len(missing), o)
            values = Parallel(n_jobs=self.n_jobs)(
                delayed(_minimax_at)(self.io, o, p, self.omega, self.tol) for p in missing
            )
            self._mu.update({(p, o): v for p, v in zip(missing, values)})
        return np.array([self._mu[(p, o)] for p in range(1, p_max + 1)])

    def lambdas(self, o: int, p_max: int, dbar: float) -> np.ndarray:
        return np.maximum(0.0, self.mu(o, p_max) - dbar)


def _minimax_at(io: IORecord, o: int, p: int, omega: float, tol: LPTolerances) -> float:
    return minimax_residual(build_sample_set(io, o, p), omega, tol)


def lambda_profile(
    io: IORecord,
    o: int,
    p_max: int,
    dbar: float = 0.0,
    profiles: ResidualProfiles | None = None,
) -> np.ndarray:
    """lambda_underbar_p for p = 1..p_max at order o."""
    profiles = profiles or ResidualProfiles(io)
    return profiles.lambdas(o, p_max, dbar)


def _tail_pbar(lam: np.ndarray, scale: float, zero_tol: ZeroTolerance, min_tail: int) -> int | None:
    nonzero = np.flatnonzero(lam > zero_tol.threshold(scale))
    if nonzero.size == 0:
        return 1
    pbar = max(1, int(nonzero[-1]) + 1)
    if lam.size - pbar < min_tail:
        return None
    return pbar


def _min_tail(p_max: int, min_tail_fraction: float) -> int:
    return max(1, int(math.ceil(min_tail_fraction * p_max)))


def default_dbar_grid(io: IORecord, points: int = 40, low: float = 0.1, high: float = 2.0) -> np.ndarray:
    sigma = float(np.std(io.y))
    if sigma <= 0:
        raise DataError("Output record is constant; cannot scale a dbar grid.")
    return np.geomspace(low * sigma, high * sigma, points)


def estimate_dbar(
    io: IORecord,
    o_init: int,
    dbar_grid: Sequence[float],
    p_max: int,
    *,
    refine_step: float | None = None,
    min_tail_fraction: float = 0.2,
    zero_tol: ZeroTolerance = ZeroTolerance(),
    profiles: ResidualProfiles | None = None,
) -> tuple[float, int, ProcedureTrace]:
    grid = [float(v) for v in dbar_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0:
        raise DataError("dbar grid must be nonempty, nonnegative and strictly ascending.")
    profiles = profiles or ResidualProfiles(io)
    scale = profiles.output_scale
    min_tail = _min_tail(p_max, min_tail_fraction)
    tried: list[float] = []
    lambdas: dict[float, np.ndarray] = {}

    def attempt(dbar: float) -> int | None:
        lam = profiles.lambdas(o_init, p_max, dbar)
        tried.append(dbar)
        lambdas[dbar] = lam
        return _tail_pbar(lam, scale, zero_tol, min_tail)

    previous: float | None = None
    for dbar in grid:
        pbar = attempt(dbar)
        if pbar is None:
            previous = dbar
            continue
        if refine_step and previous is not None:
            for candidate in np.arange(previous + refine_step, dbar, refine_step):
                refined = attempt(float(candidate))
                if refined is not None:
                    dbar, pbar = float(candidate), refined
                    break
        logger.info("Noise bound estimate dbar=%.6g with pbar=%d", dbar, pbar)
        trace = ProcedureTrace("dbar", tried, lambdas, dbar, pbar)
        return dbar, pbar, trace
    raise ProcedureError(
        f"No dbar up to {grid[-1]:.4g} makes lambda_underbar vanish over a tail of {min_tail} horizons "
        f"before p_max={p_max}; extend the dbar grid or increase p_max."
    )


def estimate_order(
    io: IORecord,
    dbar: float,
    pbar: int,
    o_init: int,
    *,
    p_max: int | None = None,
    zero_tol: ZeroTolerance = ZeroTolerance(),
    profiles: ResidualProfiles | None = None,
) -> tuple[int, ProcedureTrace]:
    p_max = p_max or int(math.ceil(1.5 * pbar))
    if p_max <= pbar:
        raise DataError(f"p_max={p_max} must exceed pbar={pbar}.")
    profiles = profiles or ResidualProfiles(io)
    scale = profiles.output_scale
    tried: list[float] = []
    lambdas: dict[float, np.ndarray] = {}

    def passes(o: int) -> bool:
        lam = profiles.lambdas(o, p_max, dbar)
        tried.append(o)
        lambdas[o] = lam
        return all(is_zero(float(v), scale, zero_tol) for v in lam[pbar:])

    if not passes(o_init):
        raise ProcedureError(
            f"lambda_underbar does not vanish beyond pbar={pbar} at o_init={o_init}; the initial order is too small."
        )
    for o in range(o_init - 1, 0, -1):
        if not passes(o):
            logger.info("Order estimate o=%d (o=%d fails)", o + 1, o)
            return o + 1, ProcedureTrace("o", tried, lambdas, o + 1, pbar)
    note = "order 1 already satisfies the test"
    logger.info("Order estimate o=1 (%s)", note)
    return 1, ProcedureTrace("o", tried, lambdas, 1, pbar, note=note)


@dataclass(frozen=True)
class DecayFit:
    L: float
    rho: float
    objective: float

    def envelope(self, p: np.ndarray) -> np.ndarray:
        return self.L * self.rho ** np.asarray(p, dtype=float)


def _envelope_log_L(logf: np.ndarray, p: np.ndarray, rho: float) -> float:
    return float(np.max(logf - p * math.log(rho)))


def _decay_objective(f: np.ndarray, p_all: np.ndarray, logf: np.ndarray, p_pos: np.ndarray, rho: float) -> float:
    log_L = _envelope_log_L(logf, p_pos, rho)
    with np.errstate(over="ignore", invalid="ignore"):
        residual = f - np.exp(log_L + p_all * math.log(rho))
        value = float(np.dot(residual, residual))
    return value if math.isfinite(value) else math.inf


def fit_decay(eps_series: Sequence[float] | np.ndarray, pbar: int | None = None, rho_step: float = 1e-3) -> DecayFit:
    """Tightest exponential envelope L rho^p >= f_p in the least-squares sense.

    For fixed rho the best feasible L is max_p f_p rho^-p, so only rho is searched:
    a uniform scan, then bounded Brent refinement around the best grid point.
    """
    f = np.asarray(eps_series, dtype=float)
    if f.ndim != 1 or f.size == 0 or np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DataError("Decay fit needs a finite, nonnegative 1-D series.")
    if pbar is not None and f.size <= pbar:
        raise DataError(f"Series length {f.size} (p_max) must exceed pbar={pbar}.")
    positive = f > 0
    if not positive.any():
        raise ProcedureError("All eps_hat values are zero; the decay envelope is undefined.")
    p_all = np.arange(1, f.size + 1, dtype=float)
    p_pos, logf = p_all[positive], np.log(f[positive])

    def objective(rho: float) -> float:
        return _decay_objective(f, p_all, logf, p_pos, rho)

    grid = np.arange(1, int(round(1.0 / rho_step))) * rho_step
    scores = np.array([objective(r) for r in grid])
    if not np.isfinite(scores).any():
        raise NumericalError("Decay fit objective is not finite on the rho grid.")
    best = int(np.argmin(scores))
    rho, value = float(grid[best]), float(scores[best])
    lo, hi = max(grid[best] - rho_step, rho_step * 1e-3), min(grid[best] + rho_step, 1.0 - rho_step * 1e-3)
    refined = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    if refined.success and refined.fun <= value:
        rho, value = float(refined.x), float(refined.fun)
    L = math.exp(_envelope_log_L(logf, p_pos, rho))
    logger.info("Decay fit: L=%.6g rho=%.6g (objective %.4g)", L, rho, value)
    return DecayFit(L=L, rho=rho, objective=value)


def _max_entry(polys: Sequence[Polytope], entries: range, tol: LPTolerances, n_jobs: int) -> float:
    best = -math.inf
    for p, poly in enumerate(polys, start=1):
        outcomes = solve_lp_batch(np.eye(poly.dim)[list(entries)], poly, "max", tol, n_jobs)
        for outcome in outcomes:
            if outcome.status == "infeasible":
                raise EmptySetError(f"Feasible parameter set at p={p} is empty.")
            if not outcome.optimal:
                raise NumericalError(f"Parameter-extreme LP ended {outcome.status} at p={p}.")
            best = max(best, outcome.value)
    return best


def _divide_by_rho(value: float, rho_hat: float, what: str) -> float:
    if not 0.0 < rho_hat < 1.0:
        raise DataError(f"rho_hat must lie in (0, 1), got {rho_hat}.")
    if value <= 0:
        raise ProcedureError(f"Largest {what} parameter is {value:.4g}; a positive decay constant cannot be formed.")
    return value / rho_hat


def estimate_Lz(
    polys: Sequence[Polytope], o: int, rho_hat: float, tol: LPTolerances = DEFAULT_TOL, n_jobs: int = 1
) -> float:
    if not polys:
        raise DataError("At least one feasible parameter set is required.")
    return _divide_by_rho(_max_entry(polys, range(0, o), tol, n_jobs), rho_hat, "output")


def estimate_Lu(
    polys: Sequence[Polytope], o: int, rho_hat: float, tol: LPTolerances = DEFAULT_TOL, n_jobs: int = 1
) -> float:
    if not polys:
        raise DataError("At least one feasible parameter set is required.")
    return _divide_by_rho(_max_entry(polys, range(o, 2 * o), tol, n_jobs), rho_hat, "input")


@dataclass
class EstimationSummary:
    dbar: float
    pbar: int
    o: int
    p_max: int
    rho_hat: float
    L_hat: float
    Lz_hat: float
    Lu_hat: float
    lam: list[float] = field(default_factory=list)
    eps_hat: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    inputs: dict[str, str] = field(default_factory=dict)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: Path) -> EstimationSummary:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Estimation report not found at {path}")
        return cls(**json.loads(path.read_text()))
