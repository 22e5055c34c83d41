import numpy as np
import pandas as pd
import pytest

from smident.dataset import RegressorLayout, build_sample_set, export_sample_set, regressor, split
from smident.errors import DataError
from smident.lti_sim import IORecord


def _record(n: int, seed: int = 0) -> IORecord:
    rng = np.random.default_rng(seed)
    return IORecord(u=rng.normal(size=n), y=rng.normal(size=n), ts=1.0)


def test_hand_indexed_rows():
    io = IORecord(u=[4.0, 5.0, 6.0], y=[1.0, 2.0, 3.0], ts=1.0)
    S = build_sample_set(io, 1, 1)
    np.testing.assert_array_equal(S.rows, [[1.0, 4.0], [2.0, 5.0]])
    np.testing.assert_array_equal(S.targets, [2.0, 3.0])
    np.testing.assert_array_equal(S.indices, [0, 1])


@pytest.mark.parametrize("o, p", [(1, 1), (2, 1), (3, 4), (2, 7)])
def test_rows_follow_stacking_rule(o, p):
    io = _record(60, seed=o * 10 + p)
    S = build_sample_set(io, o, p)
    assert len(S) == len(io) - (o - 1) - p
    assert S.rows.shape[1] == 2 * o + p - 1
    for row, target, k in zip(S.rows, S.targets, S.indices):
        np.testing.assert_array_equal(row, regressor(io.y, io.u, int(k), S.layout))
        assert target == io.y[k + p]


def test_layout_dimensions_and_names():
    assert RegressorLayout(3, 115).dim == 120
    assert RegressorLayout(4, 1).dim == 8
    assert RegressorLayout(2, 2).column_names() == ["y(k)", "y(k-1)", "u(k+1)", "u(k)", "u(k-1)"]
    with pytest.raises(DataError):
        RegressorLayout(0, 1)


def test_record_too_short():
    with pytest.raises(DataError):
        build_sample_set(_record(5), 3, 3)


def test_split_segments():
    io = _record(3000)
    ident, valid = split(io, 1500, 1500)
    assert len(ident) == len(valid) == 1500
    np.testing.assert_array_equal(valid.y, io.y[1500:])
    assert valid.meta["offset"] == 1500


def test_split_without_validation_and_overlap():
    io = _record(100)
    ident, valid = split(io, 100, 0)
    np.testing.assert_array_equal(ident.y, io.y)
    assert len(valid) == 0
    with pytest.raises(DataError):
        split(io, 80, 40)


def test_export_sample_set(tmp_path):
    S = build_sample_set(_record(30), 2, 3)
    path = export_sample_set(S, tmp_path / "p3.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["k", *S.layout.column_names(), "target"]
    assert len(frame) == len(S)
