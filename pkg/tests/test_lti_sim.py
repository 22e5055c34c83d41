import math

import numpy as np
import pandas as pd
import pytest
from scipy import signal
from scipy.integrate import solve_ivp

from smident.errors import DataError
from smident.lti_sim import (
    ContinuousTF,
    DiscreteSS,
    IORecord,
    add_noise,
    discretize_zoh,
    generate_record,
    load_external_csv,
    load_record,
    random_step_input,
    save_record,
    settling_time,
    simulate,
)


def test_integrator_zoh():
    tf = ContinuousTF((1.0,), (1.0, 0.0), allow_marginal=True)
    ss = discretize_zoh(tf, 1.0)
    np.testing.assert_allclose(ss.A, [[1.0]], atol=1e-12)
    np.testing.assert_allclose(ss.B, [[1.0]], atol=1e-12)
    np.testing.assert_allclose(ss.C, [[1.0]], atol=1e-12)


def test_first_order_zoh_closed_form(first_order_tf):
    ss = discretize_zoh(first_order_tf, 0.1)
    assert ss.A[0, 0] == pytest.approx(math.exp(-0.1), abs=1e-12)
    assert ss.B[0, 0] * ss.C[0, 0] == pytest.approx(1 - math.exp(-0.1), abs=1e-12)


def test_benchmark_decay_rate(benchmark_tf):
    ss = discretize_zoh(benchmark_tf, 0.1)
    assert ss.n == 3
    assert 0.95 < ss.spectral_radius < 0.97


def test_zoh_matches_continuous_integration(benchmark_tf):
    ts = 0.1
    u = random_step_input([-1.0, 0.0, 1.0], 0.5, 60, ts, seed=4)
    A, B, C, _ = signal.tf2ss(benchmark_tf.num, benchmark_tf.den)
    x = np.zeros(A.shape[0])
    expected = []
    for level in u:
        expected.append(float(C @ x))
        sol = solve_ivp(lambda t, s, level=level: A @ s + B[:, 0] * level, (0.0, ts), x, method="DOP853", rtol=1e-12, atol=1e-13)
        x = sol.y[:, -1]
    np.testing.assert_allclose(simulate(discretize_zoh(benchmark_tf, ts), u), expected, atol=1e-6)


@pytest.mark.parametrize(
    "num, den",
    [((1.0,), (1.0, -1.0)), ((1.0, 1.0), (1.0, 1.0)), ((1.0,), (0.0, 1.0))],
    ids=["unstable", "not-strictly-proper", "zero-leading"],
)
def test_invalid_transfer_functions(num, den):
    with pytest.raises(DataError):
        ContinuousTF(num, den)


def test_unstable_discrete_system_rejected():
    with pytest.raises(DataError):
        DiscreteSS(A=[[1.2]], B=[1.0], C=[1.0], ts=0.1)


def test_random_step_input_windows():
    u = random_step_input([-1.0, 0.0, 1.0], 10.0, 1500, 0.1, seed=3)
    assert u.size == 1500
    windows = u.reshape(15, 100)
    assert np.all(windows == windows[:, :1])
    assert set(np.unique(u)) <= {-1.0, 0.0, 1.0}


def test_random_step_input_singleton_and_determinism():
    np.testing.assert_array_equal(random_step_input([5.0], 1.0, 40, 0.5, seed=1), np.full(40, 5.0))
    a = random_step_input([-1.0, 0.0, 1.0], 2.0, 200, 0.5, seed=9)
    b = random_step_input([-1.0, 0.0, 1.0], 2.0, 200, 0.5, seed=9)
    np.testing.assert_array_equal(a, b)


def test_hold_must_be_multiple_of_ts():
    with pytest.raises(DataError):
        random_step_input([0.0, 1.0], 0.25, 100, 0.1)


def test_simulate_hand_recursion():
    ss = DiscreteSS(A=[[0.5]], B=[1.0], C=[1.0], ts=1.0)
    np.testing.assert_allclose(simulate(ss, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(simulate(ss, np.zeros(5)), np.zeros(5))


def test_benchmark_unit_step_steady_state(benchmark_tf):
    ss = discretize_zoh(benchmark_tf, 0.1)
    z = simulate(ss, np.ones(2000))
    assert z[-1] == pytest.approx(1.0, abs=1e-6)
    assert benchmark_tf.dc_gain == pytest.approx(1.0)


def test_simulate_dimension_mismatch():
    ss = DiscreteSS(A=[[0.5]], B=[1.0], C=[1.0], ts=1.0)
    with pytest.raises(DataError):
        simulate(ss, np.ones(3), x0=np.zeros(2))


def test_add_noise_bounds():
    z = np.linspace(-1, 1, 1500)
    np.testing.assert_array_equal(add_noise(z, 0.0, seed=1), z)
    d = add_noise(z, 0.1, seed=1) - z
    assert np.max(np.abs(d)) <= 0.1
    assert np.max(np.abs(d)) >= 0.099
    assert abs(d.mean()) <= 3 * (0.1 / math.sqrt(3)) / math.sqrt(d.size)
    with pytest.raises(DataError):
        add_noise(z, -0.1)


def test_settling_time(benchmark_tf):
    assert settling_time(benchmark_tf) == pytest.approx(5.0 / 0.4)


def test_generate_record_respects_noise_bound(first_order_tf):
    io = generate_record(first_order_tf, 0.5, 400, [-1.0, 1.0], 2.0, 0.1, seed=5)
    assert len(io) == 400
    assert np.max(np.abs(io.y - io.z)) <= 0.1
    assert io.meta["warmup"] == math.ceil(2 * 5.0 / 0.5)


def test_noise_bound_checked_on_construction():
    with pytest.raises(DataError):
        IORecord(u=[0.0, 0.0], y=[0.0, 0.5], z=[0.0, 0.0], ts=1.0, dbar0=0.1)


def test_save_and_load_record(tmp_path, noisy_record):
    path = save_record(noisy_record, tmp_path / "record.csv")
    loaded = load_record(path)
    np.testing.assert_array_equal(loaded.y, noisy_record.y)
    np.testing.assert_array_equal(loaded.z, noisy_record.z)
    assert loaded.seed == noisy_record.seed
    assert loaded.tf_den == noisy_record.tf_den
    assert path.with_suffix(".json").exists()


def test_record_floats_survive_the_csv(tmp_path):
    values = np.array([0.1 + 0.2, 1.0 / 3.0, -2.0 / 7.0, 1e-17 + 0.5])
    record = IORecord(u=np.ones(4), y=values, z=values.copy(), ts=0.5, seed=1)
    loaded = load_record(save_record(record, tmp_path / "floats.csv"))
    np.testing.assert_array_equal(loaded.y, values)


def test_external_csv_is_sorted_and_exact(tmp_path):
    values = np.array([1.0 / 3.0, 0.1 + 0.2, -2.0 / 7.0])
    path = tmp_path / "external.csv"
    pd.DataFrame({"k": [2, 0, 1], "u": [1.0, -1.0, 0.0], "y": values}).to_csv(path, index=False, float_format="%.17g")
    record = load_external_csv(path, ts=0.1)
    np.testing.assert_array_equal(record.u, [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(record.y, values[[1, 2, 0]])
    pd.DataFrame({"k": [0], "u": [1.0]}).to_csv(path, index=False)
    with pytest.raises(DataError):
        load_external_csv(path, ts=0.1)


def test_load_record_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_record(tmp_path / "absent.csv")
