import json

import numpy as np
import pytest

from conftest import make_samples
from smident.dataset import RegressorLayout, build_sample_set
from smident.errors import DataError, NumericalError
from smident.lti_sim import discretize_zoh
from smident.nlp import NLPSettings, Start
from smident.polytope_lp import Polytope, solve_lp
from smident.predictors import (
    IdentResult,
    ParamVector,
    WorstCaseProblem,
    evaluate_bounds,
    free_run,
    identify_method1,
    identify_method2,
    identify_multistep_decoupled,
    identify_pem,
    identify_sem,
    propagate,
    propagate_all,
    simulate_predictor,
    simulation_objective,
    true_theta1,
    validation_error,
    validation_errors,
)
from smident.sm_bounds import (
    DecayBound,
    InflationConfig,
    SupportCache,
    c_coeffs,
    gamma_set,
    refined_fps,
    tau_hat,
)


def _iterate(theta1: np.ndarray, o: int, y_hist: np.ndarray, u: np.ndarray, p: int) -> float:
    """z(k+p) by plain iteration; y_hist = y(k-o+1..k), u = u(k-o+1..k+p-1)."""
    a, b = theta1[:o], theta1[o:]
    w = list(y_hist)
    for j in range(1, p + 1):
        past_w = np.array(w[-o:][::-1])
        past_u = u[j - 1 : j - 1 + o][::-1]
        w.append(a @ past_w + b @ past_u)
    return w[-1]


def test_propagate_one_step_is_identity():
    theta = ParamVector.one_step([0.5, -0.2], [1.0, 0.3])
    np.testing.assert_array_equal(propagate(theta, 1).values, theta.values)


def test_propagate_first_order_two_steps():
    a, b = 0.7, 2.0
    theta2 = propagate(ParamVector.one_step([a], [b]), 2)
    assert theta2.layout == RegressorLayout(1, 2)
    np.testing.assert_allclose(theta2.values, [a * a, b, a * b])


def test_propagate_matches_iteration():
    rng = np.random.default_rng(0)
    for _ in range(500):
        o = int(rng.integers(1, 5))
        p = int(rng.integers(1, 31))
        theta1 = np.concatenate([rng.uniform(-0.9, 0.9, o) / o, rng.normal(size=o)])
        y_hist = rng.normal(size=o)
        u = rng.normal(size=o + p - 1)
        thetas, _ = propagate_all(theta1, p, o)
        phi = np.concatenate([y_hist[::-1], u[::-1]])
        expected = _iterate(theta1, o, y_hist, u, p)
        assert thetas[-1] @ phi == pytest.approx(expected, abs=1e-10 * max(1.0, abs(expected)))


def test_propagate_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    o, p_max, h = 2, 8, 1e-6
    theta1 = np.concatenate([[0.6, -0.2], rng.normal(size=o)])
    _, jacs = propagate_all(theta1, p_max, o, with_jacobian=True)
    for i in range(2 * o):
        step = np.zeros(2 * o)
        step[i] = h
        plus, _ = propagate_all(theta1 + step, p_max, o)
        minus, _ = propagate_all(theta1 - step, p_max, o)
        for p in range(p_max):
            np.testing.assert_allclose(jacs[p][:, i], (plus[p] - minus[p]) / (2 * h), atol=1e-7)


def test_propagate_rejects_bad_layouts():
    with pytest.raises(DataError):
        propagate_all(np.zeros(3), 2, o=2)
    with pytest.raises(DataError):
        propagate(ParamVector(RegressorLayout(1, 2), [0.1, 0.2, 0.3]), 3)


def test_true_theta1_first_order(first_order_ss):
    theta = true_theta1(first_order_ss, 1)
    np.testing.assert_allclose(theta.values, [np.exp(-0.5), 1 - np.exp(-0.5)], atol=1e-12)
    padded = true_theta1(first_order_ss, 3)
    np.testing.assert_allclose(padded.theta_y[1:], 0.0)
    np.testing.assert_allclose(padded.theta_u[1:], 0.0)


def test_true_theta1_needs_system_order(benchmark_tf):
    with pytest.raises(DataError):
        true_theta1(discretize_zoh(benchmark_tf, 0.1), 2)


def test_simulate_predictor_true_model_reproduces_clean_output(clean_record, first_order_ss):
    theta = true_theta1(first_order_ss, 1)
    zhat = simulate_predictor(theta, clean_record, 10, 40)
    np.testing.assert_allclose(zhat, clean_record.truth[11:51], atol=1e-9)
    zero = ParamVector.one_step([0.0], [0.0])
    np.testing.assert_array_equal(simulate_predictor(zero, clean_record, 10, 5), np.zeros(5))


def test_simulate_predictor_matches_propagation(noisy_record):
    theta = ParamVector.one_step([0.5, 0.2], [0.3, -0.1])
    start, horizon = 30, 12
    zhat = simulate_predictor(theta, noisy_record, start, horizon)
    thetas, _ = propagate_all(theta, horizon)
    for p in range(1, horizon + 1):
        S = build_sample_set(noisy_record, 2, p)
        row = S.rows[np.flatnonzero(S.indices == start)[0]]
        assert row @ thetas[p - 1] == pytest.approx(zhat[p - 1], abs=1e-10)


def test_free_run_matches_simulation_and_sensitivity(noisy_record):
    theta = np.array([0.5, 0.2, 0.3, -0.1])
    zhat, dz = free_run(theta, noisy_record, 2)
    np.testing.assert_allclose(zhat, simulate_predictor(ParamVector.one_step(theta[:2], theta[2:]), noisy_record, 1, len(noisy_record) - 2))
    h = 1e-6
    for i in range(4):
        step = np.zeros(4)
        step[i] = h
        plus, _ = free_run(theta + step, noisy_record, 2, with_sensitivity=False)
        minus, _ = free_run(theta - step, noisy_record, 2, with_sensitivity=False)
        np.testing.assert_allclose(dz[:, i], (plus - minus) / (2 * h), atol=1e-6)


def test_free_run_restarts_from_measurements(noisy_record):
    theta = np.array([0.9, 0.5])
    zhat, _ = free_run(theta, noisy_record, 1, segment_length=10)
    assert zhat[10] == pytest.approx(0.9 * noisy_record.y[10] + 0.5 * noisy_record.u[10])


def test_pem_recovers_clean_parameters(clean_record, first_order_ss):
    theta = identify_pem(build_sample_set(clean_record, 1, 1))
    np.testing.assert_allclose(theta.values, true_theta1(first_order_ss, 1).values, atol=1e-8)


def test_pem_residual_is_orthogonal(noisy_record):
    S = build_sample_set(noisy_record, 2, 1)
    theta = identify_pem(S)
    r = S.targets - S.rows @ theta.values
    assert np.linalg.norm(S.rows.T @ r) <= 1e-8 * len(S)


def test_pem_rank_deficiency():
    S = make_samples([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], [1.0, 2.0, 3.0])
    with pytest.raises(NumericalError):
        identify_pem(S)


def test_sem_never_worse_than_pem(noisy_record):
    pem = identify_pem(build_sample_set(noisy_record, 1, 1))
    sem, diag = identify_sem(noisy_record, 1)
    assert diag["objective"] <= simulation_objective(pem.values, noisy_record, 1) + 1e-12
    assert simulation_objective(sem.values, noisy_record, 1) == pytest.approx(diag["objective"], rel=1e-9)


def test_sem_clean_data_is_exact(clean_record):
    _, diag = identify_sem(clean_record, 1)
    assert diag["objective"] <= 1e-12


def _epigraph_optimum(S, poly) -> float:
    c = c_coeffs(S, poly)
    D = np.vstack([S.rows, -S.rows])
    d = poly.dim
    lp = Polytope(
        A=np.vstack([np.hstack([poly.A, np.zeros((poly.n_rows, 1))]), np.hstack([-D, -np.ones((D.shape[0], 1))])]),
        b=np.concatenate([poly.b, -c]),
        lb=np.append(poly.lb, -100.0),
        ub=np.append(poly.ub, 100.0),
    )
    objective = np.zeros(d + 1)
    objective[-1] = 1.0
    return solve_lp(objective, "min", lp).value


def test_decoupled_singleton():
    S = make_samples([[1.0, 2.0], [0.5, -1.0]], [0.0, 1.0])
    point = np.array([0.4, -0.3])
    theta, tau = identify_multistep_decoupled(S, Polytope.box(point, point), 0.05, InflationConfig())
    np.testing.assert_allclose(theta.values, point, atol=1e-9)
    assert tau == pytest.approx(0.05, abs=1e-9)


def test_decoupled_matches_full_epigraph_lp():
    rng = np.random.default_rng(8)
    cfg = InflationConfig()
    for _ in range(10):
        S = make_samples(rng.normal(size=(6, 2)), 0.3 * rng.normal(size=6))
        poly = Polytope(
            A=np.vstack([S.rows, -S.rows]),
            b=np.concatenate([S.targets + 1.0, -S.targets + 1.0]),
            lb=[-5.0, -5.0],
            ub=[5.0, 5.0],
        )
        theta, tau = identify_multistep_decoupled(S, poly, 0.1, cfg)
        best = _epigraph_optimum(S, poly)
        assert tau == pytest.approx(cfg.gamma * max(best, 0.0) + 0.1, abs=1e-6)
        assert poly.contains(theta.values, 1e-7)


def _bounded_problem(noisy_record, first_order_ss, pbar: int):
    o = 1
    samples = [build_sample_set(noisy_record, o, p) for p in range(1, pbar + 1)]
    truth = true_theta1(first_order_ss, o)
    thetas, _ = propagate_all(truth, pbar)
    eps = [1.5 * float(np.max(np.abs(S.targets - S.rows @ th))) for S, th in zip(samples, thetas)]
    decay = DecayBound(0.9, 5.0, 5.0)
    polys = [refined_fps(S, e, 0.0, decay) for S, e in zip(samples, eps)]
    caches = [SupportCache(S, poly) for S, poly in zip(samples, polys)]
    return samples, eps, decay, polys, caches, truth


def test_decoupled_beats_every_reachable_vector(noisy_record, first_order_ss):
    samples, eps, _, polys, caches, truth = _bounded_problem(noisy_record, first_order_ss, 3)
    cfg = InflationConfig()
    thetas, _ = propagate_all(truth, 3)
    for S, poly, e, cache, theta in zip(samples, polys, eps, caches, thetas):
        _, tau_star = identify_multistep_decoupled(S, poly, e, cfg, cache)
        assert tau_star <= tau_hat(theta, S, poly, e, cfg, cache) + 1e-6


def test_method1_single_horizon_equals_decoupled(noisy_record, first_order_ss):
    samples, eps, _, polys, caches, truth = _bounded_problem(noisy_record, first_order_ss, 1)
    cfg = InflationConfig()
    _, tau_star = identify_multistep_decoupled(samples[0], polys[0], eps[0], cfg, caches[0])
    theta, diag = identify_method1(samples, polys, caches, [Start("truth", truth.values)])
    gap_star = (tau_star - eps[0]) / cfg.gamma
    assert diag["objective"] == pytest.approx(gap_star, abs=1e-4)
    assert polys[0].contains(theta.values, 1e-6)


def test_method1_improves_on_feasible_start(noisy_record, first_order_ss):
    samples, _, _, polys, caches, truth = _bounded_problem(noisy_record, first_order_ss, 4)
    problem = WorstCaseProblem(1, polys, caches)
    start_objective = problem.objective_at(truth.values)
    theta, diag = identify_method1(samples, polys, caches, [Start("truth", truth.values)])
    assert diag["objective"] <= start_objective + 1e-9
    assert diag["objective"] == pytest.approx(problem.objective_at(theta.values), abs=1e-9)
    thetas, _ = propagate_all(theta, 4)
    assert all(poly.violation(th) <= 1e-6 for poly, th in zip(polys, thetas))
    assert diag["linear_rows"] == 2 * len(samples[0])


def test_method2_recovers_clean_parameters(clean_record, first_order_ss):
    truth = true_theta1(first_order_ss, 1)
    wide = Polytope.box([-10.0, -10.0], [10.0, 10.0])
    gammas = [Polytope.box(-10 * np.ones(3), 10 * np.ones(3))]
    start = Start("perturbed", truth.values + 0.05)
    theta, diag = identify_method2(clean_record, 1, wide, gammas, [start])
    np.testing.assert_allclose(theta.values, truth.values, atol=1e-3)
    assert diag["horizon"] == 2


def test_method2_without_constraints_matches_sem(noisy_record):
    sem, sem_diag = identify_sem(noisy_record, 1)
    pem = identify_pem(build_sample_set(noisy_record, 1, 1))
    wide = Polytope.box([-10.0, -10.0], [10.0, 10.0])
    gammas = [gamma_set(1, p, DecayBound(0.999, 1e3, 1e3)) for p in range(2, 4)]
    _, diag = identify_method2(noisy_record, 1, wide, gammas, [Start("PEM", pem.values)])
    n = len(noisy_record) - 1
    assert diag["objective"] == pytest.approx(sem_diag["objective"] / n, rel=1e-3)


def test_validation_error_examples(clean_record, first_order_ss):
    truth = true_theta1(first_order_ss, 1)
    assert validation_error(truth, clean_record, 5) <= 1e-9
    zero = ParamVector.one_step([0.0], [0.0])
    S = build_sample_set(clean_record, 1, 3)
    assert validation_error(zero, clean_record, 3) == pytest.approx(np.max(np.abs(clean_record.truth[S.indices + 3])))
    with pytest.raises(DataError):
        validation_error(propagate(truth, 2), clean_record, 3)


def test_evaluate_bounds_fills_series(noisy_record, first_order_ss):
    samples, eps, _, polys, caches, truth = _bounded_problem(noisy_record, first_order_ss, 3)
    result = IdentResult("PEM", theta1=truth)
    lam = [e / 1.3 for e in eps]
    series = evaluate_bounds(result, samples, polys, caches, eps, lam, 0.0, InflationConfig(), noisy_record)
    assert result.bounds is series
    assert series.tau_hat.shape == (3,)
    assert np.all(series.tau_hat >= np.asarray(eps) - 1e-12)
    thetas, _ = propagate_all(truth, 3)
    np.testing.assert_allclose(series.e, validation_errors(thetas, 1, noisy_record))


def test_ident_result_json(tmp_path):
    layout = RegressorLayout(1, 1)
    result = IdentResult(
        "MultiStep",
        theta_p=[ParamVector(layout, [0.5, 0.4]), ParamVector(RegressorLayout(1, 2), [0.25, 0.4, 0.2])],
        diagnostics={"rounds": 2},
    )
    assert len(result.thetas(2)) == 2
    with pytest.raises(DataError):
        result.thetas(3)
    saved = json.loads(result.save_json(tmp_path / "MultiStep.json").read_text())
    assert saved["theta1"] is None
    assert saved["theta_p"][1] == [0.25, 0.4, 0.2]
