import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coopkernel.kernel import (
    KernelSpec,
    LinearKernel,
    TableKernel,
    make_arms,
    product_feature_map,
    psd_factor,
)

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def explicit_problem(rng, V=None, n=None, d=None):
    """Random product-kernel problem with an explicit feature map.

    The task Gram is a random low-rank PSD table, the arm kernel is linear.
    """
    V = V or int(rng.integers(1, 4))
    n = n or int(rng.integers(2, 6))
    d = d or int(rng.integers(1, 6))
    r = int(rng.integers(1, V + 1))
    A = rng.standard_normal((V, r))
    Kz = A @ A.T
    arms = make_arms([rng.standard_normal((n, d)) for _ in range(V)], [[v] for v in range(V)])
    spec = KernelSpec(LinearKernel(), TableKernel(Kz), product_feature_map(psd_factor(Kz)))
    return spec, arms


def dense_precision(Phi, lam, xi):
    """Direct (xi I + sum lam phi phi^T)^{-1} in feature space."""
    D = Phi.shape[1]
    return np.linalg.inv(xi * np.eye(D) + Phi.T @ (np.asarray(lam)[:, None] * Phi))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
