import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ompstop.omp import Dataset  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_dataset(rng, n, p, k=3, sigma=1.0, intercept=False):
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: min(k, p)] = rng.uniform(0.5, 2.0, min(k, p)) * rng.choice([-1, 1], min(k, p))
    eps = sigma * rng.standard_normal(n)
    return Dataset(X=X, Y=X @ beta + eps, beta_star=beta, epsilon=eps, intercept=intercept)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng, 50, 100)
