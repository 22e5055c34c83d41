"""Set-Membership bounds: lambda_underbar, inflated bounds, feasible parameter sets and tau_hat."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from smident.dataset import SampleSet
from smident.errors import ConfigError, DataError, EmptySetError, NumericalError
from smident.polytope_lp import (
    DEFAULT_OMEGA,
    DEFAULT_TOL,
    LPTolerances,
    Polytope,
    intersect,
    is_empty,
    solve_lp,
    solve_lp_batch,
)

logger = logging.getLogger(__name__)

LAZY_BATCH = 8


@dataclass(frozen=True)
class InflationConfig:
    alpha: float = 1.3
    gamma: float = 1.2

    def __post_init__(self) -> None:
        if not self.alpha > 1.0 or not self.gamma > 1.0:
            raise ConfigError(f"alpha and gamma must exceed 1 (got alpha={self.alpha}, gamma={self.gamma}).")


@dataclass(frozen=True)
class DecayBound:
    rho_hat: float
    Lz_hat: float
    Lu_hat: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho_hat < 1.0:
            raise ConfigError(f"rho_hat must lie in (0, 1), got {self.rho_hat}.")
        if not self.Lz_hat > 0.0 or not self.Lu_hat > 0.0:
            raise ConfigError(f"L_z and L_u estimates must be positive (got {self.Lz_hat}, {self.Lu_hat}).")

    def scaled(self, factor: float) -> DecayBound:
        return replace(self, Lz_hat=self.Lz_hat * factor, Lu_hat=self.Lu_hat * factor)


@dataclass(frozen=True)
class ZeroTolerance:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6

    def threshold(self, scale: float) -> float:
        return max(self.abs_tol, self.rel_tol * scale)


def is_zero(value: float, scale: float, tol: ZeroTolerance = ZeroTolerance()) -> bool:
    return value <= tol.threshold(scale)


@dataclass
class BoundSeries:
    """Per-horizon bounds for p = 1..len(lam)."""

    lam: np.ndarray
    eps_hat: np.ndarray
    dbar: float
    o: int
    tau_hat: np.ndarray | None = None
    e: np.ndarray | None = None
    fps_kind: str = "refined"

    def __post_init__(self) -> None:
        self.lam = np.asarray(self.lam, dtype=float)
        self.eps_hat = np.asarray(self.eps_hat, dtype=float)
        if self.tau_hat is not None:
            self.tau_hat = np.asarray(self.tau_hat, dtype=float)
        if self.e is not None:
            self.e = np.asarray(self.e, dtype=float)
        if self.lam.shape != self.eps_hat.shape:
            raise DataError("lambda and eps_hat series must have equal length.")
        if np.any(self.lam < 0) or not np.all(np.isfinite(self.lam)):
            raise DataError("lambda_underbar values must be finite and nonnegative.")

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(1, self.lam.size + 1)

    def to_frame(self) -> pd.DataFrame:
        n = self.lam.size
        frame = pd.DataFrame({"p": self.horizons, "lambda": self.lam, "eps_hat": self.eps_hat})
        frame["tau_hat"] = self.tau_hat[:n] if self.tau_hat is not None else np.nan
        if self.e is not None:
            frame["e"] = self.e[:n]
        return frame

    def export(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.12g")
        return path


def _abs_residual_polytope(S: SampleSet, bound_rhs: float, extra_var: bool, omega: float) -> Polytope:
    """|y - phi^T theta| <= bound_rhs (+ lambda when extra_var) as two stacked row blocks."""
    n, d = S.rows.shape
    if extra_var:
        col = -np.ones((n, 1))
        A = np.vstack([np.hstack([S.rows, col]), np.hstack([-S.rows, col])])
        lb = np.concatenate([np.full(d, -omega), [0.0]])
        ub = np.concatenate([np.full(d, omega), [omega]])
    else:
        A = np.vstack([S.rows, -S.rows])
        lb, ub = np.full(d, -omega), np.full(d, omega)
    b = np.concatenate([S.targets + bound_rhs, -S.targets + bound_rhs])
    return Polytope(A=A, b=b, lb=lb, ub=ub)


def lambda_underbar(
    S: SampleSet,
    dbar: float,
    omega: float = DEFAULT_OMEGA,
    tol: LPTolerances = DEFAULT_TOL,
) -> float:
    if len(S) == 0:
        raise DataError("Cannot compute lambda_underbar on an empty sample set.")
    if dbar < 0:
        raise DataError("Disturbance bound must be nonnegative.")
    poly = _abs_residual_polytope(S, dbar, extra_var=True, omega=omega)
    objective = np.zeros(poly.dim)
    objective[-1] = 1.0
    outcome = solve_lp(objective, "min", poly, tol)
    if not outcome.optimal:
        raise NumericalError(f"lambda_underbar LP ended {outcome.status} (o={S.layout.o}, p={S.layout.p}).")
    return max(0.0, outcome.value)


def minimax_residual(S: SampleSet, omega: float = DEFAULT_OMEGA, tol: LPTolerances = DEFAULT_TOL) -> float:
    """min over theta of max_i |y_i - phi_i^T theta|; lambda_underbar(dbar) = max(0, this - dbar)."""
    return lambda_underbar(S, 0.0, omega, tol)


def eps_hat(lam: float, cfg: InflationConfig) -> float:
    if lam < 0:
        raise DataError("lambda_underbar must be nonnegative.")
    return cfg.alpha * lam


def fps(S: SampleSet, eps: float, dbar: float, omega: float = DEFAULT_OMEGA) -> Polytope:
    if eps < 0 or dbar < 0:
        raise DataError("eps_hat and dbar must be nonnegative.")
    return _abs_residual_polytope(S, eps + dbar, extra_var=False, omega=omega)


def gamma_set(o: int, p: int, d: DecayBound, omega: float = DEFAULT_OMEGA) -> Polytope:
    y_bounds = d.Lz_hat * d.rho_hat ** (p + np.arange(1, o + 1))
    u_bounds = d.Lu_hat * d.rho_hat ** np.arange(1, p + o)
    bound = np.minimum(np.concatenate([y_bounds, u_bounds]), omega)
    return Polytope.box(-bound, bound)


def refined_fps(S: SampleSet, eps: float, dbar: float, d: DecayBound, omega: float = DEFAULT_OMEGA) -> Polytope:
    return intersect(fps(S, eps, dbar, omega), gamma_set(S.layout.o, S.layout.p, d, omega))


@dataclass
class Enlargement:
    factor: float
    eps_hat: list[float]
    decay: DecayBound
    polytopes: list[Polytope]
    rounds: int = 0


def _enlarge_until(
    samples: Sequence[SampleSet],
    eps: Sequence[float],
    dbar: float,
    decay: DecayBound,
    accept: Callable[[list[Polytope]], list[int]],
    step: float,
    cap: float,
    omega: float,
    what: str,
) -> Enlargement:
    if not step > 1.0:
        raise ConfigError(f"Inflation step must exceed 1, got {step}.")
    factor, rounds = 1.0, 0
    while True:
        cur_eps = [e * factor for e in eps]
        cur_decay = decay.scaled(factor)
        polys = [refined_fps(S, e, dbar, cur_decay, omega) for S, e in zip(samples, cur_eps)]
        failing = accept(polys)
        if not failing:
            if rounds:
                logger.info("Bounds enlarged by %.4f after %d rounds to restore %s", factor, rounds, what)
            return Enlargement(factor=factor, eps_hat=cur_eps, decay=cur_decay, polytopes=polys, rounds=rounds)
        factor *= step
        rounds += 1
        logger.debug("%s fails at horizons %s; trying factor %.4f", what, failing[:10], factor)
        if factor > cap:
            raise EmptySetError(
                f"Could not restore {what} within enlargement cap {cap} (failing horizons: {failing[:10]})."
            )


def ensure_nonempty(
    samples: Sequence[SampleSet],
    eps: Sequence[float],
    dbar: float,
    decay: DecayBound,
    step: float = 1.05,
    cap: float = 10.0,
    omega: float = DEFAULT_OMEGA,
    tol: LPTolerances = DEFAULT_TOL,
) -> Enlargement:
    def empty_horizons(polys: list[Polytope]) -> list[int]:
        return [S.layout.p for S, poly in zip(samples, polys) if is_empty(poly, tol)]

    return _enlarge_until(samples, eps, dbar, decay, empty_horizons, step, cap, omega, "non-empty refined FPS")


def containment(thetas: Sequence[np.ndarray], polys: Sequence[Polytope], tol: float = 1e-9) -> list[int]:
    """Horizons p (1-based) whose polytope misses the given parameter vector."""
    return [p for p, (theta, poly) in enumerate(zip(thetas, polys), start=1) if not poly.contains(theta, tol)]


def ensure_contains(
    samples: Sequence[SampleSet],
    eps: Sequence[float],
    dbar: float,
    decay: DecayBound,
    thetas: Sequence[np.ndarray],
    step: float = 1.05,
    cap: float = 10.0,
    omega: float = DEFAULT_OMEGA,
    tol: float = 1e-9,
) -> Enlargement:
    return _enlarge_until(
        samples, eps, dbar, decay, lambda polys: containment(thetas, polys, tol), step, cap, omega, "containment"
    )


@dataclass
class SupportCache:
    """Support values c_j = max over the polytope of phi_check_j^T theta, resolved lazily.

    Unresolved rows carry a valid upper bound: the row's own right-hand side when
    the polytope holds the data rows (fps/refined_fps layout) and the box support.
    """

    S: SampleSet
    poly: Polytope
    tol: LPTolerances = DEFAULT_TOL
    n_jobs: int = 1
    directions: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    exact: np.ndarray = field(init=False)
    lp_count: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if self.S.layout.dim != self.poly.dim:
            raise DataError(f"Sample set dimension {self.S.layout.dim} != polytope dimension {self.poly.dim}.")
        self.directions = np.vstack([self.S.rows, -self.S.rows])
        upper = self.poly.box_support(self.directions)
        m = self.directions.shape[0]
        if self.poly.n_rows >= m and np.array_equal(self.poly.A[:m], self.directions):
            upper = np.minimum(upper, self.poly.b[:m])
        self.values = upper
        self.exact = np.zeros(m, dtype=bool)

    def resolve(self, idx: np.ndarray | Sequence[int]) -> None:
        idx = np.asarray([j for j in np.atleast_1d(idx) if not self.exact[j]], dtype=int)
        if idx.size == 0:
            return
        outcomes = solve_lp_batch(self.directions[idx], self.poly, "max", self.tol, self.n_jobs)
        self.lp_count += idx.size
        for j, outcome in zip(idx, outcomes):
            if outcome.status == "infeasible":
                raise EmptySetError(f"Feasible parameter set is empty (p={self.S.layout.p}).")
            if not outcome.optimal:
                raise NumericalError(f"Support LP ended {outcome.status} (p={self.S.layout.p}, row {j}).")
            self.values[j] = min(outcome.value, self.values[j])
            self.exact[j] = True

    def resolve_all(self) -> np.ndarray:
        self.resolve(np.flatnonzero(~self.exact))
        return self.values.copy()

    def max_gap(self, theta_p: np.ndarray) -> tuple[float, int]:
        """max over j of c_j - phi_check_j^T theta_p with every candidate row resolved exactly."""
        projections = self.directions @ np.asarray(theta_p, dtype=float)
        while True:
            scores = self.values - projections
            best = float(np.max(scores[self.exact])) if self.exact.any() else -np.inf
            candidates = np.flatnonzero(~self.exact & (scores > best))
            if candidates.size == 0:
                j = int(np.flatnonzero(self.exact)[np.argmax(scores[self.exact])])
                return best, j
            top = candidates[np.argsort(-scores[candidates], kind="stable")[:LAZY_BATCH]]
            self.resolve(top)


class SupportCacheRegistry:
    """SupportCache instances keyed by (p, polytope hash)."""

    def __init__(self, tol: LPTolerances = DEFAULT_TOL, n_jobs: int = 1) -> None:
        self.tol = tol
        self.n_jobs = n_jobs
        self._caches: dict[tuple[int, str], SupportCache] = {}
        self._lock = threading.Lock()

    def get(self, S: SampleSet, poly: Polytope) -> SupportCache:
        key = (S.layout.p, poly.key)
        cache = self._caches.get(key)
        if cache is None:
            with self._lock:
                cache = self._caches.setdefault(key, SupportCache(S, poly, self.tol, self.n_jobs))
        return cache

    @property
    def lp_count(self) -> int:
        return sum(c.lp_count for c in self._caches.values())


def c_coeffs(S: SampleSet, poly: Polytope, tol: LPTolerances = DEFAULT_TOL, n_jobs: int = 1) -> np.ndarray:
    return SupportCache(S, poly, tol, n_jobs).resolve_all()


def tau_hat(
    theta_p: np.ndarray,
    S: SampleSet,
    poly: Polytope,
    eps: float,
    cfg: InflationConfig,
    cache: SupportCache | None = None,
) -> float:
    theta_p = np.asarray(theta_p, dtype=float)
    if theta_p.size != S.layout.dim:
        raise DataError(f"Parameter vector has {theta_p.size} entries, layout needs {S.layout.dim}.")
    cache = cache or SupportCache(S, poly)
    gap, _ = cache.max_gap(theta_p)
    return cfg.gamma * max(gap, 0.0) + eps
