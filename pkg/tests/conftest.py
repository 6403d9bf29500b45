from __future__ import annotations

import numpy as np
import pytest

from flexmmbm.model import MmbmParams

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def cyclic_generator(m: int = 8, rate: float = 0.1) -> np.ndarray:
    Q = np.zeros((m, m))
    for i in range(m):
        Q[i, (i + 1) % m] = rate
        Q[i, i] = -rate
    return Q


def streaming_generator(beta_b=0.1, beta_p=0.03, beta_f=0.1, alpha=1 / 60, p1=0.5) -> np.ndarray:
    Q = np.array(
        [
            [0, beta_b, alpha, 0, 0],
            [0, 0, 0, alpha, beta_p],
            [alpha, 0, 0, beta_b, 0],
            [0, alpha, 0, 0, beta_p],
            [beta_f * p1, 0, beta_f * (1 - p1), 0, 0],
        ],
        dtype=float,
    )
    return Q - np.diag(Q.sum(axis=1))


STREAMING_MU = np.array([0.25, -0.25, 0.625, 0.125, -0.5])
STREAMING_SIGMA = np.sqrt([0.25, 0.75, 0.625, 1.125, 0.5])


def random_generator(rng, m: int, density: float = 0.6) -> np.ndarray:
    """Random irreducible generator: a random cycle plus sparse extra rates."""
    Q = rng.exponential(1.0, (m, m)) * (rng.random((m, m)) < density)
    perm = rng.permutation(m)
    for k in range(m):
        Q[perm[k], perm[(k + 1) % m]] += rng.uniform(0.05, 1.0)
    np.fill_diagonal(Q, 0.0)
    return Q - np.diag(Q.sum(axis=1))


def random_params(rng, m: int | None = None, zero_drift: bool = False) -> MmbmParams:
    m = int(rng.integers(1, 9)) if m is None else m
    if zero_drift and m == 1:
        m = 2
    Q = random_generator(rng, m)
    mu = rng.uniform(-10, 10, m)
    sigma = rng.uniform(0.1, 10, m)
    if zero_drift:
        from flexmmbm.linalg import stationary_vector

        alpha = stationary_vector(Q)
        # fix the drift of the most likely phase so that alpha @ mu vanishes
        k = int(np.argmax(alpha))
        mu[k] = 0.0
        mu[k] = -(alpha @ mu) / alpha[k]
    return MmbmParams(Q, mu, sigma)


def corpus(n: int = 200, n_zero: int = 20, seed: int = 12345):
    """Deterministic random models; every tenth one has exactly zero mean drift."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        out.append(random_params(rng, zero_drift=(k % (n // n_zero) == 0)))
    return out


@pytest.fixture
def scalar_neg():
    return MmbmParams.from_variance([[0.0]], [-1.0], [10.0])


@pytest.fixture
def cyclic_params():
    sigma = np.ones(8)
    sigma[-1] = 10.0
    return MmbmParams(cyclic_generator(), -np.ones(8), sigma)


@pytest.fixture
def streaming_params():
    return MmbmParams(streaming_generator(), STREAMING_MU, STREAMING_SIGMA)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
