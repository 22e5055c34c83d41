"""Halfspace polytopes {theta : A theta <= b, lb <= theta <= ub} and the LP engine behind every bound."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Literal, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linprog

from smident.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

Sense = Literal["min", "max"]

DEFAULT_OMEGA = 1e15
# below this many objectives a batch runs in-process
PARALLEL_MIN_BATCH = 32
# (method, presolve) pairs tried in order until one certifies
SOLVER_ATTEMPTS: tuple[tuple[str, bool], ...] = (("highs-ds", True), ("highs-ipm", False), ("highs-ds", False))


@dataclass(frozen=True)
class LPTolerances:
    """Certification tolerances plus the working-box schedule.

    Every LP is first solved on the polytope clipped to [-working_box, working_box];
    the clip widens by box_growth until none of its bounds carries a multiplier,
    at which point the optimum is also optimal for the unclipped polytope.
    """

    feasibility: float = 1e-9
    optimality: float = 1e-7
    working_box: float = 1e3
    box_growth: float = 1e3

    def __post_init__(self) -> None:
        if self.working_box <= 0 or self.box_growth <= 1:
            raise DataError("working_box must be positive and box_growth greater than 1.")


DEFAULT_TOL = LPTolerances()


@dataclass(frozen=True, eq=False)
class Polytope:
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self) -> None:
        lb = np.asarray(self.lb, dtype=float).ravel()
        ub = np.asarray(self.ub, dtype=float).ravel()
        d = lb.size
        A = np.asarray(self.A, dtype=float).reshape(-1, d)
        b = np.asarray(self.b, dtype=float).ravel()
        if ub.size != d or A.shape[0] != b.size:
            raise DataError(f"Inconsistent polytope data: A{A.shape}, b{b.shape}, box {lb.size}/{ub.size}")
        for arr in (A, b, lb, ub):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def box(cls, lb: Sequence[float] | np.ndarray, ub: Sequence[float] | np.ndarray) -> Polytope:
        lb = np.asarray(lb, dtype=float)
        return cls(A=np.zeros((0, lb.size)), b=np.zeros(0), lb=lb, ub=ub)

    @classmethod
    def omega(cls, dim: int, bound: float = DEFAULT_OMEGA) -> Polytope:
        return cls.box(np.full(dim, -bound), np.full(dim, bound))

    @property
    def dim(self) -> int:
        return int(self.lb.size)

    @property
    def n_rows(self) -> int:
        return int(self.b.size)

    @cached_property
    def key(self) -> str:
        digest = hashlib.sha1()
        for arr in (self.A, self.b, self.lb, self.ub):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def violation(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        parts = [np.max(self.lb - theta, initial=0.0), np.max(theta - self.ub, initial=0.0)]
        if self.n_rows:
            parts.append(np.max(self.A @ theta - self.b, initial=0.0))
        return float(max(parts))

    def contains(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        return self.violation(theta) <= tol

    def box_support(self, directions: np.ndarray) -> np.ndarray:
        """max of v^T theta over the box part only (an upper bound on the polytope's support)."""
        directions = np.atleast_2d(directions)
        return np.sum(np.maximum(directions * self.lb, directions * self.ub), axis=1)


@dataclass(frozen=True)
class LPOutcome:
    status: Literal["optimal", "infeasible", "unbounded"]
    x: np.ndarray | None
    value: float
    primal_residual: float = 0.0
    duality_gap: float = 0.0
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def certified(self, tol: LPTolerances = DEFAULT_TOL) -> bool:
        # feasibility is checked at the optimality tolerance: HiGHS scales rows internally
        return self.optimal and self.primal_residual <= tol.optimality and self.duality_gap <= tol.optimality


def _duality_gap(res, poly: Polytope, tol: LPTolerances) -> float:
    # strong duality: fun == sum(rhs * marginal); bound duals only count where the bound is active
    x = np.asarray(res.x, dtype=float)
    terms = [float(res.fun)]
    if poly.n_rows:
        terms.extend(-(poly.b * res.ineqlin.marginals))
    for bound, marginals in ((poly.lb, res.lower.marginals), (poly.ub, res.upper.marginals)):
        active = np.abs(x - bound) <= tol.feasibility * np.maximum(1.0, np.abs(bound))
        terms.extend(-(bound[active] * marginals[active]))
    return abs(math.fsum(terms)) / (1.0 + abs(float(res.fun)))


def _working_boxes(poly: Polytope, tol: LPTolerances) -> Iterator[tuple[Polytope, bool]]:
    limit = float(max(np.max(np.abs(poly.lb)), np.max(np.abs(poly.ub))))
    width = tol.working_box
    while width < limit:
        lb, ub = np.maximum(poly.lb, -width), np.minimum(poly.ub, width)
        if np.all(lb <= ub):
            yield Polytope(A=poly.A, b=poly.b, lb=lb, ub=ub), False
        width *= tol.box_growth
    yield poly, True


def _clip_binds(res, work: Polytope, poly: Polytope, tol: LPTolerances) -> bool:
    clipped_lo, clipped_hi = work.lb > poly.lb, work.ub < poly.ub
    return bool(
        np.any(np.abs(res.lower.marginals[clipped_lo]) > tol.optimality)
        or np.any(np.abs(res.upper.marginals[clipped_hi]) > tol.optimality)
    )


def _solve_certified(c: np.ndarray, sign: float, poly: Polytope, tol: LPTolerances):
    failures = []
    for method, presolve in SOLVER_ATTEMPTS:
        res = linprog(
            sign * c,
            A_ub=poly.A if poly.n_rows else None,
            b_ub=poly.b if poly.n_rows else None,
            bounds=np.column_stack([poly.lb, poly.ub]),
            method=method,
            options={
                "primal_feasibility_tolerance": tol.feasibility,
                "dual_feasibility_tolerance": tol.optimality,
                "presolve": presolve,
            },
        )
        if res.status == 2:
            return res, LPOutcome(status="infeasible", x=None, value=math.nan)
        if res.status == 3:
            return res, LPOutcome(status="unbounded", x=None, value=sign * -math.inf)
        if res.status != 0:
            failures.append(f"{method}/presolve={presolve}: status {res.status} ({res.message})")
            continue
        x = np.asarray(res.x, dtype=float)
        outcome = LPOutcome(
            status="optimal",
            x=x,
            value=sign * float(res.fun),
            primal_residual=poly.violation(x),
            duality_gap=_duality_gap(res, poly, tol),
            iterations=int(getattr(res, "nit", 0)),
        )
        if outcome.certified(tol):
            return res, outcome
        failures.append(
            f"{method}/presolve={presolve}: residual {outcome.primal_residual:.2e}, gap {outcome.duality_gap:.2e}"
        )
        logger.debug("LP attempt not certified: %s", failures[-1])
    raise NumericalError("LP optimum could not be certified: " + "; ".join(failures))


def solve_lp(
    objective: Sequence[float] | np.ndarray,
    sense: Sense,
    poly: Polytope,
    tol: LPTolerances = DEFAULT_TOL,
) -> LPOutcome:
    c = np.asarray(objective, dtype=float).ravel()
    if c.size != poly.dim or c.size < 1:
        raise DataError(f"Objective has {c.size} entries, polytope dimension is {poly.dim}.")
    if not (np.all(np.isfinite(poly.lb)) and np.all(np.isfinite(poly.ub))):
        raise DataError("Finite box bounds are required.")
    if np.any(poly.lb > poly.ub):
        return LPOutcome(status="infeasible", x=None, value=math.nan)
    sign = -1.0 if sense == "max" else 1.0
    for work, final in _working_boxes(poly, tol):
        res, outcome = _solve_certified(c, sign, work, tol)
        if final or (outcome.optimal and not _clip_binds(res, work, poly, tol)):
            return outcome
    raise NumericalError("No working box produced an LP outcome.")


def solve_lp_batch(
    objectives: Sequence[np.ndarray] | np.ndarray,
    poly: Polytope,
    sense: Sense = "max",
    tol: LPTolerances = DEFAULT_TOL,
    n_jobs: int = 1,
) -> list[LPOutcome]:
    objectives = [np.asarray(c, dtype=float) for c in objectives]
    if n_jobs == 1 or len(objectives) < PARALLEL_MIN_BATCH:
        return [solve_lp(c, sense, poly, tol) for c in objectives]
    # joblib returns results in submission order
    return Parallel(n_jobs=n_jobs)(delayed(solve_lp)(c, sense, poly, tol) for c in objectives)


def is_empty(poly: Polytope, tol: LPTolerances = DEFAULT_TOL) -> bool:
    if np.any(poly.lb > poly.ub):
        return True
    outcome = solve_lp(np.zeros(poly.dim), "min", poly, tol)
    return outcome.status == "infeasible"


def intersect(p1: Polytope, p2: Polytope) -> Polytope:
    if p1.dim != p2.dim:
        raise DataError(f"Cannot intersect polytopes of dimension {p1.dim} and {p2.dim}.")
    return Polytope(
        A=np.vstack([p1.A, p2.A]),
        b=np.concatenate([p1.b, p2.b]),
        lb=np.maximum(p1.lb, p2.lb),
        ub=np.minimum(p1.ub, p2.ub),
    )


def bounding_box(poly: Polytope, tol: LPTolerances = DEFAULT_TOL, n_jobs: int = 1) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(poly.dim)
    highs = solve_lp_batch(eye, poly, "max", tol, n_jobs)
    lows = solve_lp_batch(eye, poly, "min", tol, n_jobs)
    if any(not o.optimal for o in highs + lows):
        raise NumericalError("Bounding box requested for an empty polytope.")
    return np.array([o.value for o in lows]), np.array([o.value for o in highs])
