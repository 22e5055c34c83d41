"""One-step ARX predictors, the multi-step parameter recursion and the identification methods."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal
from scipy.optimize import least_squares
from sklearn.linear_model import LinearRegression

from smident.dataset import RegressorLayout, SampleSet, build_sample_set
from smident.errors import DataError, EmptySetError, NumericalError
from smident.lti_sim import DiscreteSS, IORecord
from smident.nlp import NLPResult, NLPSettings, Start, multistart, solve
from smident.polytope_lp import DEFAULT_OMEGA, DEFAULT_TOL, LPTolerances, Polytope, is_empty, solve_lp
from smident.sm_bounds import LAZY_BATCH, BoundSeries, InflationConfig, SupportCache, tau_hat

logger = logging.getLogger(__name__)

METHODS = ("PEM", "SEM", "MethodI", "MethodII", "MultiStep")


@dataclass(frozen=True)
class ParamVector:
    layout: RegressorLayout
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.layout.dim:
            raise DataError(f"Parameter vector has {values.size} entries, layout o={self.layout.o}, p={self.layout.p} needs {self.layout.dim}.")
        if not np.all(np.isfinite(values)):
            raise DataError("Parameter vector has non-finite entries.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def one_step(cls, a: Sequence[float], b: Sequence[float]) -> ParamVector:
        if len(a) != len(b):
            raise DataError("Output and input coefficient lists must have equal length.")
        return cls(RegressorLayout(len(a), 1), np.concatenate([a, b]))

    @property
    def theta_y(self) -> np.ndarray:
        return self.values[self.layout.y_slice]

    @property
    def theta_u(self) -> np.ndarray:
        return self.values[self.layout.u_slice]

    def to_dict(self) -> dict:
        return {"o": self.layout.o, "p": self.layout.p, "values": self.values.tolist()}


def _recursion(theta1: np.ndarray, o: int, p_max: int, with_jacobian: bool):
    # z(k+j) = sum_i a_i w(k+j-i) + sum_i b_i u(k+j-i), w = y in the past and z in the future.
    # U columns index u(k+s) for s = -o+1 .. p_max-1 at position s+o-1.
    a = theta1[:o]
    n_u = o + p_max - 1
    Y = np.zeros((p_max + 1, o))
    U = np.zeros((p_max + 1, n_u))
    dY = np.zeros((p_max + 1, o, 2 * o)) if with_jacobian else None
    dU = np.zeros((p_max + 1, n_u, 2 * o)) if with_jacobian else None
    for j in range(1, p_max + 1):
        for i in range(1, o + 1):
            if j - i >= 1:
                Y[j] += a[i - 1] * Y[j - i]
                U[j] += a[i - 1] * U[j - i]
                if with_jacobian:
                    dY[j] += a[i - 1] * dY[j - i]
                    dU[j] += a[i - 1] * dU[j - i]
                    dY[j][:, i - 1] += Y[j - i]
                    dU[j][:, i - 1] += U[j - i]
            else:
                Y[j][i - j] += a[i - 1]
                if with_jacobian:
                    dY[j][i - j, i - 1] += 1.0
            U[j][j - i + o - 1] += theta1[o + i - 1]
            if with_jacobian:
                dU[j][j - i + o - 1, o + i - 1] += 1.0
    return Y, U, dY, dU


def propagate_all(
    theta1: ParamVector | np.ndarray, p_max: int, o: int | None = None, with_jacobian: bool = False
) -> tuple[list[np.ndarray], list[np.ndarray] | None]:
    """theta_p = h(theta1, p, o) for p = 1..p_max, with d theta_p / d theta1 when asked."""
    if isinstance(theta1, ParamVector):
        if theta1.layout.p != 1:
            raise DataError("propagate needs a one-step (p=1) parameter vector.")
        o, values = theta1.layout.o, theta1.values
    else:
        values = np.asarray(theta1, dtype=float)
        o = o if o is not None else values.size // 2
    if values.size != 2 * o:
        raise DataError(f"One-step vector must have 2o={2 * o} entries, got {values.size}.")
    if p_max < 1:
        raise DataError("Horizon must be >= 1.")
    Y, U, dY, dU = _recursion(values, o, p_max, with_jacobian)
    thetas = [np.concatenate([Y[p], U[p][: p + o - 1][::-1]]) for p in range(1, p_max + 1)]
    if not with_jacobian:
        return thetas, None
    jacs = [np.vstack([dY[p], dU[p][: p + o - 1][::-1]]) for p in range(1, p_max + 1)]
    return thetas, jacs


def propagate(theta1: ParamVector, p: int, o: int | None = None) -> ParamVector:
    if theta1.layout.p != 1 or (o is not None and o != theta1.layout.o):
        raise DataError("Layout mismatch: propagate needs a one-step vector of the given order.")
    thetas, _ = propagate_all(theta1, p)
    return ParamVector(RegressorLayout(theta1.layout.o, p), thetas[-1])


class _PropagationMemo:
    """Last propagate_all evaluation, shared by every constraint block of one problem."""

    def __init__(self, o: int, p_max: int) -> None:
        self.o = o
        self.p_max = p_max
        self._key: bytes | None = None
        self._value: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    def __call__(self, theta1: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        key = np.asarray(theta1, dtype=float).tobytes()
        if key != self._key:
            with np.errstate(over="ignore", invalid="ignore"):
                self._value = propagate_all(np.asarray(theta1, dtype=float), self.p_max, self.o, with_jacobian=True)
            self._key = key
        return self._value


def true_theta1(ss: DiscreteSS, o: int) -> ParamVector:
    """ARX coefficients of the discrete system, zero-padded to order o."""
    num, den = signal.ss2tf(ss.A, ss.B, ss.C, np.zeros((1, 1)))
    num, den = np.ravel(num), np.ravel(den)
    n = ss.n
    if o < n:
        raise DataError(f"Order {o} is below the system order {n}.")
    a = np.zeros(o)
    b = np.zeros(o)
    a[:n] = -den[1 : n + 1] / den[0]
    b[:n] = num[1 : n + 1] / den[0]
    return ParamVector.one_step(a, b)


def simulate_predictor(theta1: ParamVector, io: IORecord, start: int, horizon: int) -> np.ndarray:
    """Free run z(start+1..start+horizon) seeded with measured y up to start."""
    o = theta1.layout.o
    if start < o - 1:
        raise DataError(f"Start index {start} leaves less than o={o} samples of history.")
    if start + horizon > len(io):
        raise DataError(f"Horizon {horizon} from {start} runs past the record ({len(io)} samples).")
    a, b = theta1.theta_y, theta1.theta_u
    w = np.concatenate([io.y[: start + 1], np.zeros(horizon)])
    for k in range(start + 1, start + horizon + 1):
        w[k] = a @ w[k - o : k][::-1] + b @ io.u[k - o : k][::-1]
    return w[start + 1 :]


def free_run(
    theta1: np.ndarray, io: IORecord, o: int, segment_length: int | None = None, with_sensitivity: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """Simulated z(o..N-1) from the first admissible regressor, and dz/dtheta1.

    With segment_length the simulation is re-seeded with measured outputs at
    the start of every segment.
    """
    n = len(io)
    if n <= o:
        raise DataError(f"Record of {n} samples is too short for o={o}.")
    theta1 = np.asarray(theta1, dtype=float)
    a, b = theta1[:o], theta1[o:]
    y, u = io.y, io.u
    w = y.copy()
    dw = np.zeros((n, 2 * o)) if with_sensitivity else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(o, n):
            if segment_length and k > o and (k - o) % segment_length == 0:
                w[k - o : k] = y[k - o : k]
                if with_sensitivity:
                    dw[k - o : k] = 0.0
            past_w = w[k - o : k][::-1]
            past_u = u[k - o : k][::-1]
            w[k] = a @ past_w + b @ past_u
            if with_sensitivity:
                dw[k, :o] = past_w
                dw[k, o:] = past_u
                dw[k] += a @ dw[k - o : k][::-1]
    return w[o:], (dw[o:] if with_sensitivity else None)


def simulation_objective(theta1: np.ndarray, io: IORecord, o: int, segment_length: int | None = None) -> float:
    zhat, _ = free_run(theta1, io, o, segment_length, with_sensitivity=False)
    r = io.y[o:] - zhat
    return float(r @ r)


@dataclass
class IdentResult:
    method: str
    theta1: ParamVector | None = None
    theta_p: list[ParamVector] = field(default_factory=list)
    bounds: BoundSeries | None = None
    diagnostics: dict = field(default_factory=dict)

    def thetas(self, pbar: int) -> list[np.ndarray]:
        if self.theta1 is not None:
            thetas, _ = propagate_all(self.theta1, pbar)
            return thetas
        if len(self.theta_p) < pbar:
            raise DataError(f"{self.method} holds {len(self.theta_p)} horizons, {pbar} requested.")
        return [t.values for t in self.theta_p[:pbar]]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "theta1": self.theta1.to_dict() if self.theta1 is not None else None,
            "theta_p": [t.values.tolist() for t in self.theta_p],
            "diagnostics": self.diagnostics,
        }

    def save_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float) + "\n")
        return path


def identify_pem(S1: SampleSet) -> ParamVector:
    if S1.layout.p != 1:
        raise DataError("PEM works on the one-step sample set (p=1).")
    rank = int(np.linalg.matrix_rank(S1.rows))
    if rank < S1.layout.dim:
        raise NumericalError(
            f"One-step regressor matrix has rank {rank} < {S1.layout.dim}; the input is not exciting enough for o={S1.layout.o}."
        )
    model = LinearRegression(fit_intercept=False).fit(S1.rows, S1.targets)
    return ParamVector(S1.layout, model.coef_)


def identify_sem(
    io: IORecord,
    o: int,
    theta_init: ParamVector | None = None,
    segment_length: int | None = None,
    max_nfev: int | None = 500,
    tol: float = 1e-10,
) -> tuple[ParamVector, dict]:
    """Unconstrained simulation-error minimization from theta_init (PEM by default)."""
    if theta_init is None:
        theta_init = identify_pem(build_sample_set(io, o, 1))
    target = io.y[o:]

    def residual(theta: np.ndarray) -> np.ndarray:
        zhat, _ = free_run(theta, io, o, segment_length, with_sensitivity=False)
        return target - zhat

    def jacobian(theta: np.ndarray) -> np.ndarray:
        _, dz = free_run(theta, io, o, segment_length)
        return -dz

    # trf shrinks the trust region when a trial step yields non-finite residuals
    res = least_squares(residual, theta_init.values, jac=jacobian, method="trf", max_nfev=max_nfev, xtol=tol, ftol=tol)
    start_obj = simulation_objective(theta_init.values, io, o, segment_length)
    final_obj = float(2.0 * res.cost)
    theta = res.x
    if not np.all(np.isfinite(theta)) or not final_obj <= start_obj:
        theta, final_obj = theta_init.values, start_obj
    diagnostics = {
        "converged": bool(res.success),
        "message": str(res.message),
        "nfev": int(res.nfev),
        "objective": final_obj,
        "start_objective": start_obj,
    }
    logger.info("SEM: objective %.6g (start %.6g, %d evaluations)", final_obj, start_obj, res.nfev)
    return ParamVector(RegressorLayout(o, 1), theta), diagnostics


def identify_multistep_decoupled(
    S: SampleSet,
    poly: Polytope,
    eps: float,
    cfg: InflationConfig,
    cache: SupportCache | None = None,
    tol: LPTolerances = DEFAULT_TOL,
    omega: float = DEFAULT_OMEGA,
    max_rounds: int = 500,
) -> tuple[ParamVector, float]:
    """argmin over the polytope of max_j (c_j - phi_check_j^T theta) by row generation."""
    cache = cache or SupportCache(S, poly, tol)
    if is_empty(poly, tol):
        raise EmptySetError(f"Feasible parameter set at p={S.layout.p} is empty.")
    if not cache.exact.any():
        cache.resolve(np.argsort(-cache.values, kind="stable")[:LAZY_BATCH])
    d = poly.dim
    objective = np.zeros(d + 1)
    objective[-1] = 1.0
    for _ in range(max_rounds):
        rows = np.flatnonzero(cache.exact)
        D = cache.directions[rows]
        lp = Polytope(
            A=np.vstack([np.hstack([poly.A, np.zeros((poly.n_rows, 1))]), np.hstack([-D, -np.ones((rows.size, 1))])]),
            b=np.concatenate([poly.b, -cache.values[rows]]),
            lb=np.append(poly.lb, -omega),
            ub=np.append(poly.ub, omega),
        )
        outcome = solve_lp(objective, "min", lp, tol)
        if outcome.status == "infeasible":
            raise EmptySetError(f"Feasible parameter set at p={S.layout.p} is empty.")
        if not outcome.optimal:
            raise NumericalError(f"Decoupled LP ended {outcome.status} at p={S.layout.p}.")
        theta, t = outcome.x[:-1], outcome.x[-1]
        gap, _ = cache.max_gap(theta)
        if gap <= t + tol.optimality * max(1.0, abs(t)):
            return ParamVector(S.layout, theta), cfg.gamma * max(gap, 0.0) + eps
    raise NumericalError(f"Decoupled LP row generation did not settle in {max_rounds} rounds at p={S.layout.p}.")


@dataclass
class _SupportRows:
    """zeta - (c_j - phi_check_j^T theta_p) >= 0 over x = [theta1, zeta]."""

    name: str
    p: int
    cache: SupportCache
    memo: _PropagationMemo
    margin: float

    def values(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        thetas, _ = self.memo(x[:-1])
        proj = self.cache.directions @ thetas[self.p - 1] if rows is None else self.cache.directions[rows] @ thetas[self.p - 1]
        if rows is None:
            # rows that can reach the working set are resolved exactly
            loose = np.flatnonzero(~self.cache.exact & (self.cache.values - proj > x[-1] - self.margin))
            self.cache.resolve(loose)
            return x[-1] - (self.cache.values - proj)
        return x[-1] - (self.cache.values[rows] - proj)

    def jacobian(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        _, jacs = self.memo(x[:-1])
        J = self.cache.directions[rows] @ jacs[self.p - 1]
        return np.hstack([J, np.ones((rows.size, 1))])


@dataclass
class _HalfspaceRows:
    """b - A theta_p(theta1) >= 0; `extended` marks a trailing variable that does not enter."""

    name: str
    p: int
    A: np.ndarray
    b: np.ndarray
    memo: _PropagationMemo
    extended: bool = False

    def _theta1(self, x: np.ndarray) -> np.ndarray:
        return x[:-1] if self.extended else x

    def values(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        thetas, _ = self.memo(self._theta1(x))
        if rows is None:
            return self.b - self.A @ thetas[self.p - 1]
        return self.b[rows] - self.A[rows] @ thetas[self.p - 1]

    def jacobian(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        _, jacs = self.memo(self._theta1(x))
        J = -self.A[rows] @ jacs[self.p - 1]
        return np.hstack([J, np.zeros((rows.size, 1))]) if self.extended else J


def _box_rows(poly: Polytope) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(poly.dim)
    return np.vstack([-eye, eye]), np.concatenate([-poly.lb, poly.ub])


def _worst_gap(caches: Sequence[SupportCache], thetas: Sequence[np.ndarray]) -> float:
    return max(cache.max_gap(theta)[0] for cache, theta in zip(caches, thetas))


@dataclass
class WorstCaseProblem:
    """min over theta1 of the largest support gap across horizons 1..pbar,
    with h(theta1, p, o) kept inside every refined feasible parameter set."""

    o: int
    polys: list[Polytope]
    caches: list[SupportCache]
    settings: NLPSettings = field(default_factory=NLPSettings)

    def __post_init__(self) -> None:
        self.pbar = len(self.polys)
        self.memo = _PropagationMemo(self.o, self.pbar)
        blocks = []
        for p, (poly, cache) in enumerate(zip(self.polys, self.caches), start=1):
            blocks.append(_SupportRows(f"gap[p={p}]", p, cache, self.memo, self.settings.margin))
            blocks.append(_HalfspaceRows(f"fps[p={p}]", p, poly.A, poly.b, self.memo, extended=True))
            if p > 1:
                A, b = _box_rows(poly)
                blocks.append(_HalfspaceRows(f"decay[p={p}]", p, A, b, self.memo, extended=True))
        self.blocks = blocks
        self.bounds = [(float(lo), float(hi)) for lo, hi in zip(self.polys[0].lb, self.polys[0].ub)] + [(0.0, None)]

    def objective_at(self, theta1: np.ndarray) -> float:
        thetas, _ = propagate_all(theta1, self.pbar, self.o)
        return _worst_gap(self.caches, thetas)

    def violation_at(self, theta1: np.ndarray) -> float:
        x = np.append(theta1, 0.0)
        worst = 0.0
        for block in self.blocks:
            if isinstance(block, _HalfspaceRows):
                worst = max(worst, float(np.max(-block.values(x), initial=0.0)))
        return worst

    def run(self, start: Start) -> tuple[str, NLPResult]:
        theta0 = np.asarray(start.x0, dtype=float)
        zeta0 = self.objective_at(theta0)
        result = solve(lambda x: x[-1], _last_unit, self.blocks, np.append(theta0, zeta0), self.bounds, self.settings)
        theta = result.x[:-1]
        objective = self.objective_at(theta)
        start_violation = self.violation_at(theta0)
        if start_violation <= self.settings.tol and not (result.success and objective <= zeta0):
            # never return a point worse than a feasible start
            result = NLPResult(
                np.append(theta0, zeta0),
                zeta0,
                start_violation,
                result.iterations,
                result.rounds,
                True,
                mode="start",
                message=result.message,
            )
            objective = zeta0
        result.objective = objective
        result.x = result.x[:-1]
        return start.label, result


def _last_unit(x: np.ndarray) -> np.ndarray:
    g = np.zeros_like(x)
    g[-1] = 1.0
    return g


def _constraint_counts(samples: Sequence[SampleSet]) -> dict:
    n_rows = [2 * len(S) for S in samples]
    return {"linear_rows": n_rows[0], "nonlinear_rows": int(sum(n_rows[1:]))}


def identify_method1(
    samples: Sequence[SampleSet],
    polys: Sequence[Polytope],
    caches: Sequence[SupportCache],
    starts: Sequence[Start],
    settings: NLPSettings = NLPSettings(),
    n_jobs: int = 1,
) -> tuple[ParamVector, dict]:
    """Minimize the worst support gap over horizons 1..pbar through h(theta1, p, o)."""
    if not polys or len(polys) != len(caches) or len(polys) != len(samples):
        raise DataError("Method I needs one sample set, polytope and support cache per horizon.")
    o = samples[0].layout.o
    problem = WorstCaseProblem(o, list(polys), list(caches), settings)
    label, best, runs = multistart(problem, starts, n_jobs)
    diagnostics = {
        "start": label,
        "objective": best.objective,
        "violation": best.violation,
        "iterations": best.iterations,
        "rounds": best.rounds,
        "mode": best.mode,
        "starts": {lab: {"objective": r.objective, "violation": r.violation, "feasible": r.success} for lab, r in runs},
        **_constraint_counts(samples),
    }
    logger.info("Method I: worst gap %.6g from start %s", best.objective, label)
    return ParamVector(RegressorLayout(o, 1), best.x), diagnostics


@dataclass
class SimulationProblem:
    """min ||y - z(theta1)||^2 / n over the refined one-step set, with decay boxes for p = 2..horizon."""

    io: IORecord
    o: int
    poly1: Polytope
    gammas: list[Polytope]
    segment_length: int | None = None
    settings: NLPSettings = field(default_factory=NLPSettings)

    def __post_init__(self) -> None:
        horizon = len(self.gammas) + 1
        self.memo = _PropagationMemo(self.o, horizon)
        self.blocks = [_HalfspaceRows("fps[p=1]", 1, self.poly1.A, self.poly1.b, self.memo)]
        for p, gamma in enumerate(self.gammas, start=2):
            A, b = _box_rows(gamma)
            self.blocks.append(_HalfspaceRows(f"decay[p={p}]", p, A, b, self.memo))
        self.bounds = [(float(lo), float(hi)) for lo, hi in zip(self.poly1.lb, self.poly1.ub)]
        self._n = max(1, len(self.io) - self.o)
        self._key: bytes | None = None
        self._sim: tuple[np.ndarray, np.ndarray] | None = None

    def _simulate(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = theta.tobytes()
        if key != self._key:
            zhat, dz = free_run(theta, self.io, self.o, self.segment_length)
            self._sim, self._key = (self.io.y[self.o :] - zhat, dz), key
        return self._sim

    def objective(self, theta: np.ndarray) -> float:
        r, _ = self._simulate(np.asarray(theta, dtype=float))
        value = float(r @ r) / self._n
        return value if math.isfinite(value) else 1e20

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        r, dz = self._simulate(np.asarray(theta, dtype=float))
        g = -2.0 * (dz.T @ r) / self._n
        return g if np.all(np.isfinite(g)) else np.zeros_like(g)

    def run(self, start: Start) -> tuple[str, NLPResult]:
        result = solve(self.objective, self.gradient, self.blocks, np.asarray(start.x0, dtype=float), self.bounds, self.settings)
        result.objective = self.objective(result.x)
        return start.label, result


def identify_method2(
    io: IORecord,
    o: int,
    poly1: Polytope,
    gammas: Sequence[Polytope],
    starts: Sequence[Start],
    segment_length: int | None = None,
    settings: NLPSettings = NLPSettings(),
    n_jobs: int = 1,
) -> tuple[ParamVector, dict]:
    """Simulation-error minimization with theta1 in the refined one-step set and decay boxes on h(theta1, p, o)."""
    if is_empty(poly1):
        raise EmptySetError("Refined one-step feasible parameter set is empty; enlarge the bounds first.")
    problem = SimulationProblem(io, o, poly1, list(gammas), segment_length, settings)
    label, best, runs = multistart(problem, starts, n_jobs)
    diagnostics = {
        "start": label,
        "objective": best.objective,
        "violation": best.violation,
        "iterations": best.iterations,
        "rounds": best.rounds,
        "mode": best.mode,
        "horizon": len(gammas) + 1,
        "segment_length": segment_length,
        "starts": {lab: {"objective": r.objective, "violation": r.violation, "feasible": r.success} for lab, r in runs},
    }
    logger.info("Method II: objective %.6g from start %s", best.objective, label)
    return ParamVector(RegressorLayout(o, 1), best.x), diagnostics


def validation_errors(thetas: Sequence[np.ndarray], o: int, io_val: IORecord) -> np.ndarray:
    """e_p for p = 1..len(thetas) against the noise-free output when the record has it."""
    truth = io_val.truth
    errors = np.empty(len(thetas))
    for p, theta in enumerate(thetas, start=1):
        S = build_sample_set(io_val, o, p)
        errors[p - 1] = float(np.max(np.abs(truth[S.indices + p] - S.rows @ theta)))
    return errors


def validation_error(model: ParamVector, io_val: IORecord, p: int) -> float:
    if model.layout.p == 1 and p > 1:
        model = propagate(model, p)
    elif model.layout.p != p:
        raise DataError(f"Model is laid out for p={model.layout.p}, error requested at p={p}.")
    if len(io_val) < model.layout.o + p:
        raise DataError(f"Validation record of {len(io_val)} samples is too short for p={p}.")
    S = build_sample_set(io_val, model.layout.o, p)
    return float(np.max(np.abs(io_val.truth[S.indices + p] - S.rows @ model.values)))


def evaluate_bounds(
    result: IdentResult,
    samples: Sequence[SampleSet],
    polys: Sequence[Polytope],
    caches: Sequence[SupportCache],
    eps: Sequence[float],
    lam: Sequence[float],
    dbar: float,
    cfg: InflationConfig,
    io_val: IORecord,
    fps_kind: str = "refined",
) -> BoundSeries:
    """tau_hat_p and e_p for p = 1..pbar, stored on the result."""
    pbar = len(samples)
    o = samples[0].layout.o
    thetas = result.thetas(pbar)
    taus = np.array(
        [tau_hat(theta, S, poly, e, cfg, cache) for theta, S, poly, e, cache in zip(thetas, samples, polys, eps, caches)]
    )
    errors = validation_errors(thetas, o, io_val)
    result.bounds = BoundSeries(
        lam=np.asarray(lam[:pbar], dtype=float),
        eps_hat=np.asarray(eps, dtype=float),
        dbar=dbar,
        o=o,
        tau_hat=taus,
        e=errors,
        fps_kind=fps_kind,
    )
    return result.bounds
