"""Screened SLSQP with an exact-penalty fallback, and deterministic multi-start.

Constraint families can hold hundreds of thousands of rows. Each round hands
SLSQP only the rows that are violated or nearly active at the current point,
then re-checks every row; rounds repeat until the full problem is feasible.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from smident.errors import InfeasibleStartError

logger = logging.getLogger(__name__)

# rows per family handed to SLSQP in one round
MAX_ROWS_PER_BLOCK = 1500


class ConstraintBlock(Protocol):
    """Rows g(x) >= 0."""

    name: str

    def values(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray: ...


@dataclass
class FunctionBlock:
    """ConstraintBlock from two callables returning every row."""

    name: str
    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]

    def values(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        g = self.fun(x)
        return g if rows is None else g[rows]

    def jacobian(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return self.jac(x)[rows]


@dataclass
class NLPSettings:
    tol: float = 1e-6
    max_iter: int = 200
    max_rounds: int = 12
    margin: float = 1e-3
    penalty_weights: tuple[float, ...] = (1e2, 1e4, 1e6)


@dataclass
class NLPResult:
    x: np.ndarray
    objective: float
    violation: float
    iterations: int
    rounds: int
    success: bool
    mode: str = "slsqp"
    message: str = ""
    worst: list[tuple[str, float]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.success


def _violations(blocks: Sequence[ConstraintBlock], x: np.ndarray) -> tuple[float, list[tuple[str, float]]]:
    worst: list[tuple[str, float]] = []
    total = 0.0
    for block in blocks:
        g = block.values(x)
        if g.size == 0:
            continue
        if not np.all(np.isfinite(g)):
            return math.inf, [(block.name, math.inf)]
        j = int(np.argmin(g))
        v = max(0.0, -float(g[j]))
        total = max(total, v)
        if v > 0:
            worst.append((f"{block.name}[{j}]", v))
    worst.sort(key=lambda item: -item[1])
    return total, worst


def _screen(g: np.ndarray, keep: np.ndarray, margin: float) -> np.ndarray:
    if g.size == 0:
        return keep
    near = np.flatnonzero(g < margin * max(1.0, float(np.max(np.abs(g)))))
    if near.size > MAX_ROWS_PER_BLOCK:
        near = near[np.argsort(g[near], kind="stable")[:MAX_ROWS_PER_BLOCK]]
    return np.union1d(keep, near).astype(int)


def _scipy_constraints(
    blocks: Sequence[ConstraintBlock], working: dict[str, np.ndarray], x: np.ndarray
) -> list[dict]:
    constraints = []
    for block in blocks:
        rows = working[block.name]
        if rows.size == 0:
            continue
        # rows scaled by their gradient norm at the screening point
        scale = 1.0 / np.maximum(1.0, np.linalg.norm(block.jacobian(x, rows), axis=1))
        constraints.append(
            {
                "type": "ineq",
                "fun": lambda z, b=block, r=rows, s=scale: s * b.values(z, r),
                "jac": lambda z, b=block, r=rows, s=scale: s[:, None] * b.jacobian(z, r),
            }
        )
    return constraints


def screened_slsqp(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    blocks: Sequence[ConstraintBlock],
    x0: np.ndarray,
    bounds: Sequence[tuple[float, float]] | None = None,
    settings: NLPSettings = NLPSettings(),
) -> NLPResult:
    x = np.asarray(x0, dtype=float).copy()
    working = {block.name: np.zeros(0, dtype=int) for block in blocks}
    iterations, message = 0, ""
    violation, worst = _violations(blocks, x)
    for rounds in range(1, settings.max_rounds + 1):
        for block in blocks:
            g = block.values(x)
            working[block.name] = _screen(g, working[block.name], settings.margin)
        res = minimize(
            objective,
            x,
            jac=gradient,
            method="SLSQP",
            bounds=bounds,
            constraints=_scipy_constraints(blocks, working, x),
            options={"maxiter": settings.max_iter, "ftol": settings.tol * 1e-3},
        )
        iterations += int(res.nit)
        message = str(res.message)
        if np.all(np.isfinite(res.x)):
            x = np.asarray(res.x, dtype=float)
        violation, worst = _violations(blocks, x)
        logger.debug("SLSQP round %d: objective %.6g, violation %.3g (%s)", rounds, objective(x), violation, message)
        if violation <= settings.tol:
            return NLPResult(x, float(objective(x)), violation, iterations, rounds, True, message=message)
    return NLPResult(x, float(objective(x)), violation, iterations, settings.max_rounds, False, message=message, worst=worst)


@dataclass
class _ElasticBlock:
    """g(x) + s >= 0 with the slack s appended as the last variable."""

    inner: ConstraintBlock

    @property
    def name(self) -> str:
        return self.inner.name

    def values(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        return self.inner.values(x[:-1], rows) + x[-1]

    def jacobian(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        J = self.inner.jacobian(x[:-1], rows)
        return np.hstack([J, np.ones((J.shape[0], 1))])


def penalty_fallback(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    blocks: Sequence[ConstraintBlock],
    x0: np.ndarray,
    bounds: Sequence[tuple[float, float]] | None = None,
    settings: NLPSettings = NLPSettings(),
) -> NLPResult:
    """Exact l-infinity penalty: minimize f(x) + mu*s subject to g(x) + s >= 0, s >= 0."""
    x = np.asarray(x0, dtype=float)
    elastic = [_ElasticBlock(b) for b in blocks]
    ext_bounds = None if bounds is None else [*bounds, (0.0, None)]
    result: NLPResult | None = None
    for mu in settings.penalty_weights:
        violation, _ = _violations(blocks, x)
        s0 = violation if math.isfinite(violation) else 1.0
        z0 = np.append(x, s0)

        def f(z: np.ndarray, mu: float = mu) -> float:
            return objective(z[:-1]) + mu * z[-1]

        def df(z: np.ndarray, mu: float = mu) -> np.ndarray:
            return np.append(gradient(z[:-1]), mu)

        if ext_bounds is None:
            ext_bounds = [(None, None)] * x.size + [(0.0, None)]
        inner = screened_slsqp(f, df, elastic, z0, ext_bounds, settings)
        x = inner.x[:-1]
        violation, worst = _violations(blocks, x)
        result = NLPResult(
            x,
            float(objective(x)),
            violation,
            inner.iterations,
            inner.rounds,
            violation <= settings.tol,
            mode=f"penalty(mu={mu:g})",
            message=inner.message,
            worst=worst,
        )
        if result.success:
            return result
    assert result is not None
    return result


def solve(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    blocks: Sequence[ConstraintBlock],
    x0: np.ndarray,
    bounds: Sequence[tuple[float, float]] | None = None,
    settings: NLPSettings = NLPSettings(),
) -> NLPResult:
    result = screened_slsqp(objective, gradient, blocks, x0, bounds, settings)
    if result.success:
        return result
    logger.info("SLSQP left violation %.3g; retrying with exact penalty", result.violation)
    fallback = penalty_fallback(objective, gradient, blocks, result.x, bounds, settings)
    return fallback if fallback.success or fallback.violation < result.violation else result


@dataclass
class Start:
    label: str
    x0: np.ndarray


def multistart(
    problem,
    starts: Sequence[Start],
    n_jobs: int = 1,
) -> tuple[str, NLPResult, list[tuple[str, NLPResult]]]:
    """Run every start on its own deep copy of the problem and keep the best feasible result.

    problem.run(start) -> (label, NLPResult). Ties go to the lower objective,
    then the lower violation, then the earlier start.
    """
    if not starts:
        raise ValueError("At least one start point is required.")
    if n_jobs == 1 or len(starts) == 1:
        runs = [copy.deepcopy(problem).run(s) for s in starts]
    else:
        runs = Parallel(n_jobs=n_jobs)(delayed(copy.deepcopy(problem).run)(s) for s in starts)
    for label, res in runs:
        logger.info(
            "start %-10s objective %.6g violation %.2e (%s, %d rounds)",
            label,
            res.objective,
            res.violation,
            res.mode,
            res.rounds,
        )
    feasible = [(i, label, res) for i, (label, res) in enumerate(runs) if res.success]
    if not feasible:
        worst = min((res for _, res in runs), key=lambda r: r.violation)
        raise InfeasibleStartError("No start produced a feasible point", worst.worst)
    _, label, best = min(feasible, key=lambda item: (item[2].objective, item[2].violation, item[0]))
    return label, best, list(runs)
