import numpy as np
import pytest


@pytest.fixture(scope="session")
def master_seed():
    # one fixed seed for the whole suite keeps every stochastic test reproducible
    return 20240817


def assert_within_sigma(p_hat: float, p_true: float, n: int, n_sigma: float) -> None:
    sigma = max(np.sqrt(p_true * (1 - p_true) / n), 1.0 / n)
    assert abs(p_hat - p_true) <= n_sigma * sigma, (
        f"p_hat={p_hat} vs p_true={p_true}: off by "
        f"{abs(p_hat - p_true) / sigma:.2f} sigma (n={n})")
