"""Acceptance checks on the third-order benchmark (minutes; run with -m slow)."""

import numpy as np
import pytest

from smident.artifacts import RunPaths, load_identification
from smident.cli import cmd_estimate, cmd_generate, cmd_identify, cmd_report
from smident.config import ExperimentConfig
from smident.dataset import build_sample_set
from smident.estimators import EstimationSummary, ResidualProfiles
from smident.lti_sim import load_record
from smident.sm_bounds import lambda_underbar

pytestmark = pytest.mark.slow

TRUE_ORDER = 3
DBAR0 = 0.1


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    cfg = ExperimentConfig(output_dir=str(tmp_path_factory.mktemp("benchmark")))
    cmd_generate(cfg)
    cmd_estimate(cfg)
    cmd_identify(cfg)
    cmd_report(cfg)
    return cfg, RunPaths(cfg.output_path)


@pytest.fixture(scope="module")
def summary(run):
    return EstimationSummary.load(run[1].estimation)


@pytest.fixture(scope="module")
def artifact(run):
    return load_identification(run[1].model)


@pytest.fixture(scope="module")
def results(artifact):
    return artifact["results"]


def test_estimation_chain(summary):
    assert 0.090 <= summary.dbar <= 0.101
    assert 95 <= summary.pbar <= 140
    assert summary.o == TRUE_ORDER
    assert 0.945 <= summary.rho_hat <= 0.985


def test_validation_errors_within_bounds(artifact, results, summary):
    assert artifact["containment_failures"] == [], "true parameters fall outside the refined sets"
    for name, result in results.items():
        violations = np.flatnonzero(result.bounds.e > result.bounds.tau_hat)
        assert violations.size == 0, f"{name} exceeds tau_hat at p={violations + 1}"
        assert result.bounds.tau_hat.size == summary.pbar


def test_method_ordering_at_pbar(results, summary):
    tau = {name: float(r.bounds.tau_hat[-1]) for name, r in results.items()}
    slack = 1.05
    assert tau["MultiStep"] <= tau["MethodI"] * slack
    assert tau["MethodI"] <= tau["PEM"] * slack
    assert tau["MethodII"] <= tau["SEM"] * slack
    assert tau["SEM"] <= tau["PEM"] * slack
    e_m2, e_pem = results["MethodII"].bounds.e, results["PEM"].bounds.e
    for p in (35, summary.pbar):
        assert e_m2[p - 1] <= e_pem[p - 1]


def test_lambda_vanishes_above_the_noise_bound(run, summary):
    io = load_record(run[1].ident_record)
    profiles = ResidualProfiles(io)
    above = profiles.lambdas(summary.o, summary.p_max, 0.105)
    below = profiles.lambdas(summary.o, summary.p_max, 0.05)
    threshold = run[0].zero_tolerance().threshold(profiles.output_scale)
    assert np.all(above[summary.pbar :] <= threshold)
    assert below[summary.pbar :].min() >= 0.03


def test_lambda_shrinks_on_a_subsample(run, summary):
    io = load_record(run[1].ident_record)
    for p in range(1, summary.p_max + 1):
        S = build_sample_set(io, summary.o, p)
        half = S.subset(np.arange(0, len(S), 2))
        assert lambda_underbar(half, 0.05) <= lambda_underbar(S, 0.05) + 1e-9


def test_lambda_decays_with_the_fitted_envelope(run, summary):
    io = load_record(run[1].ident_record)
    lam = ResidualProfiles(io).lambdas(summary.o, summary.pbar, DBAR0)
    p = np.arange(5, summary.pbar + 1)
    envelope = TRUE_ORDER * DBAR0 * summary.Lz_hat * summary.rho_hat ** (p + 1) * 1.2
    assert np.all(lam[p - 1] <= envelope)


def test_report_is_reproducible(run):
    cfg, paths = run
    first = paths.table_csv.read_bytes()
    cmd_report(cfg)
    assert paths.table_csv.read_bytes() == first
