import logging

import joblib
import numpy as np
import pytest

from smident.artifacts import RunPaths, load_identification, record_provenance, save_identification
from smident.errors import DataError
from smident.estimators import DecayFit, EstimationSummary
from smident.predictors import IdentResult, ParamVector
from smident.reports import comparison_table, curves_frame, decay_frame, record_frame, select_horizons, write_pdf
from smident.sm_bounds import BoundSeries


def _result(method: str, tau, e) -> IdentResult:
    result = IdentResult(method, theta1=ParamVector.one_step([0.5], [0.4]))
    n = len(tau)
    result.bounds = BoundSeries(lam=np.full(n, 0.1), eps_hat=np.full(n, 0.13), dbar=0.1, o=1, tau_hat=tau, e=e)
    return result


@pytest.fixture
def results():
    return {
        "PEM": _result("PEM", [0.5, 0.6, 0.7], [0.2, 0.3, 0.8]),
        "MultiStep": _result("MultiStep", [0.3, 0.35, 0.4], [0.1, 0.2, 0.3]),
    }


@pytest.fixture
def summary():
    return EstimationSummary(dbar=0.1, pbar=3, o=1, p_max=5, rho_hat=0.6, L_hat=1.0, Lz_hat=1.5, Lu_hat=0.7,
                             lam=[0.1] * 5, eps_hat=[0.13, 0.1, 0.05, 0.0, 0.0])


def test_select_horizons_drops_long_ones(caplog):
    with caplog.at_level(logging.WARNING):
        assert select_horizons([1, 10, 35, 115], 50) == [1, 10, 35]
    assert "115" in caplog.text
    assert select_horizons([200], 50) == [50]


def test_comparison_table_layout(results):
    table = comparison_table(results, [1, 3])
    assert list(table.columns) == [
        "p", "PEM_tau_hat", "PEM_e", "PEM_e_le_tau", "MultiStep_tau_hat", "MultiStep_e", "MultiStep_e_le_tau",
    ]
    assert table["PEM_e_le_tau"].tolist() == [True, False]
    assert table["MultiStep_tau_hat"].tolist() == [0.3, 0.4]


def test_comparison_table_needs_evaluated_results(results):
    results["SEM"] = IdentResult("SEM", theta1=ParamVector.one_step([0.5], [0.4]))
    with pytest.raises(DataError):
        comparison_table(results, [1])
    with pytest.raises(DataError):
        comparison_table({"PEM": results["PEM"]}, [4])


def test_curves_and_decay_frames(results, summary):
    curves = curves_frame(results)
    assert curves["method"].tolist() == ["PEM"] * 3 + ["MultiStep"] * 3
    decay = decay_frame(summary, DecayFit(L=0.2, rho=0.6, objective=0.0))
    np.testing.assert_allclose(decay["envelope"], 0.2 * 0.6 ** np.arange(1, 6))


def test_record_frame(noisy_record):
    frame = record_frame(noisy_record)
    assert list(frame.columns) == ["k", "t", "u", "y", "z"]
    assert frame["t"].iloc[2] == pytest.approx(2 * noisy_record.ts)


def test_pdf_is_reproducible(tmp_path, results, summary):
    table = comparison_table(results, [1, 2, 3])
    first = write_pdf(table, summary, tmp_path / "a.pdf").read_bytes()
    second = write_pdf(table, summary, tmp_path / "b.pdf").read_bytes()
    assert first.startswith(b"%PDF")
    assert first == second


def test_identification_artifact_round_trip(tmp_path, results, summary):
    path = save_identification({"results": results, "estimation": summary}, tmp_path / "ident.pkl")
    artifact = load_identification(path)
    assert artifact["estimation"] == summary
    assert set(artifact["results"]) == {"PEM", "MultiStep"}
    joblib.dump({"version": 0, "results": {}}, tmp_path / "old.pkl")
    with pytest.raises(DataError):
        load_identification(tmp_path / "old.pkl")
    with pytest.raises(FileNotFoundError):
        load_identification(tmp_path / "missing.pkl")


def test_provenance_merges_steps(tmp_path):
    paths = RunPaths(tmp_path)
    record_provenance(paths, "generate", {})
    record_provenance(paths, "estimate", {"data/identification.csv": "abc"})
    text = paths.provenance.read_text()
    assert '"estimate"' in text and '"generate"' in text
