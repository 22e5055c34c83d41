import numpy as np
import pytest

from smident.errors import InfeasibleStartError
from smident.nlp import FunctionBlock, NLPResult, NLPSettings, Start, multistart, penalty_fallback, solve


def _quadratic(x):
    return float((x[0] - 2.0) ** 2 + (x[1] - 2.0) ** 2)


def _quadratic_grad(x):
    return np.array([2.0 * (x[0] - 2.0), 2.0 * (x[1] - 2.0)])


HALF_PLANE = FunctionBlock("sum", lambda x: np.array([1.0 - x[0] - x[1]]), lambda x: np.array([[-1.0, -1.0]]))


def test_solve_projects_onto_half_plane():
    result = solve(_quadratic, _quadratic_grad, [HALF_PLANE], np.zeros(2))
    assert result.success
    np.testing.assert_allclose(result.x, [0.5, 0.5], atol=1e-5)
    assert result.objective == pytest.approx(4.5, abs=1e-5)


def test_penalty_fallback_reaches_feasibility_from_outside():
    result = penalty_fallback(_quadratic, _quadratic_grad, [HALF_PLANE], np.array([3.0, 3.0]))
    assert result.violation <= NLPSettings().tol
    assert result.mode.startswith("penalty")


class _Conflicting:
    def run(self, start):
        block = FunctionBlock(
            "box", lambda x: np.array([x[0] - 1.0, -x[0]]), lambda x: np.array([[1.0], [-1.0]])
        )
        return start.label, solve(lambda x: float(x[0] ** 2), lambda x: 2.0 * x, [block], start.x0)


def test_multistart_reports_infeasibility():
    with pytest.raises(InfeasibleStartError) as info:
        multistart(_Conflicting(), [Start("zero", np.zeros(1))])
    assert info.value.violations


class _Preset:
    def __init__(self, results):
        self.results = results

    def run(self, start):
        return start.label, self.results[start.label]


def _result(objective, violation, success=True):
    return NLPResult(np.zeros(1), objective, violation, 1, 1, success)


def test_multistart_tie_breaking():
    problem = _Preset(
        {
            "a": _result(1.0, 1e-8),
            "b": _result(1.0, 1e-9),
            "c": _result(0.5, 0.0, success=False),
            "d": _result(1.0, 1e-9),
        }
    )
    starts = [Start(label, np.zeros(1)) for label in "abcd"]
    label, best, runs = multistart(problem, starts)
    assert label == "b"
    assert [lab for lab, _ in runs] == ["a", "b", "c", "d"]
