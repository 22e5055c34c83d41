from __future__ import annotations

import numpy as np
import pytest

from smident.dataset import RegressorLayout, SampleSet
from smident.lti_sim import ContinuousTF, discretize_zoh, generate_record

FIRST_ORDER_TS = 0.5
BENCHMARK_NUM = (160.0,)
BENCHMARK_DEN = (1.0, 10.8, 24.0, 160.0)


@pytest.fixture(scope="session")
def first_order_tf() -> ContinuousTF:
    return ContinuousTF((1.0,), (1.0, 1.0))


@pytest.fixture(scope="session")
def first_order_ss(first_order_tf):
    return discretize_zoh(first_order_tf, FIRST_ORDER_TS)


@pytest.fixture(scope="session")
def benchmark_tf() -> ContinuousTF:
    return ContinuousTF(BENCHMARK_NUM, BENCHMARK_DEN)


@pytest.fixture(scope="session")
def clean_record(first_order_tf):
    """Noise-free first-order record."""
    return generate_record(first_order_tf, FIRST_ORDER_TS, 300, [-1.0, 0.0, 1.0], 2.0, 0.0, seed=7, warmup=20)


@pytest.fixture(scope="session")
def noisy_record(first_order_tf):
    return generate_record(first_order_tf, FIRST_ORDER_TS, 300, [-1.0, 0.0, 1.0], 2.0, 0.05, seed=11, warmup=20)


def make_samples(rows, targets, o: int = 1, p: int = 1) -> SampleSet:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    targets = np.asarray(targets, dtype=float)
    return SampleSet(RegressorLayout(o, p), rows, targets, np.arange(targets.size))
