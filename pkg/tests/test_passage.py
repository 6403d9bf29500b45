import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_bvp

from conftest import corpus, cyclic_generator, random_params
from flexmmbm import (
    DomainError,
    Drift,
    InvalidInputError,
    MmbmParams,
    exit_probabilities,
    reverse_levels,
    solve_pair,
    solve_passage,
)
from flexmmbm.linalg import group_inverse, matrix_exp
from flexmmbm.passage import coefficient_matrix, down_closed_form, passage_down, passage_up, up_closed_form

CORPUS = corpus()


def scale_exit(mu, s2, b, x):
    """Probability that a scalar Brownian motion from x hits b before 0."""
    if mu == 0:
        return x / b
    k = -2 * mu / s2
    return np.expm1(k * x) / np.expm1(k * b)


def bvp_exit_to_b(p, b, xs):
    # columns of P(x, b) solve (1/2) S G'' + D G' + Q G = 0 with G(0) = 0, G(b) = I
    m = p.m
    S2inv = np.diag(2.0 / p.sigma2)
    D, Q = np.diag(p.mu), p.Q

    def f(x, y):
        G, dG = y[: m * m].reshape(m, m, -1), y[m * m:].reshape(m, m, -1)
        ddG = -np.einsum("ij,jkn->ikn", S2inv @ D, dG) - np.einsum("ij,jkn->ikn", S2inv @ Q, G)
        return np.concatenate([dG.reshape(m * m, -1), ddG.reshape(m * m, -1)])

    def bc(ya, yb):
        return np.concatenate([ya[: m * m], yb[: m * m] - np.eye(m).ravel()])

    mesh = np.linspace(0, b, 200)
    y0 = np.zeros((2 * m * m, mesh.size))
    y0[: m * m] = np.outer(np.eye(m).ravel(), mesh / b)
    y0[m * m:] = np.eye(m).ravel()[:, None] / b
    sol = solve_bvp(f, bc, mesh, y0, tol=1e-10, max_nodes=100_000)
    assert sol.success
    return [sol.sol(x)[: m * m].reshape(m, m) for x in xs]


def test_scalar_negative_drift(scalar_neg):
    sol = solve_passage(scalar_neg, solve_pair(scalar_neg), 4.0)
    # L_b = sigma * d/dx of the exit-to-b probability at x = 0
    k = 0.2
    expected = np.sqrt(10.0) * k / np.expm1(k * 4.0)
    assert sol.L_b[0, 0] == pytest.approx(expected, abs=1e-12)
    assert sol.L_b[0, 0] == pytest.approx(0.51606, abs=5e-6)
    assert sol.P_b[0, 0] == pytest.approx(-expected, abs=1e-12)
    assert sol.H0[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert sol.Hb[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_zero_drift_scalar():
    p = MmbmParams([[0.0]], [0.0], [1.0])
    gen = solve_pair(p)
    assert gen.drift.kind is Drift.ZERO
    sol = solve_passage(p, gen, 2.0)
    for a in (sol.L_b, sol.L_hat_b):
        assert a[0, 0] == pytest.approx(0.5, abs=1e-10)
    for a in (sol.P_b, sol.P_hat_b):
        assert a[0, 0] == pytest.approx(-0.5, abs=1e-10)


@pytest.mark.parametrize("x", [0.0, 0.3, 0.77, 1.0, 1.9, 2.5])
def test_driftless_scalar_exit_is_linear(x):
    p = MmbmParams([[0.0]], [0.0], [1.3])
    P0, Pb = exit_probabilities(p, solve_pair(p), 2.5, x)
    assert Pb[0, 0] == pytest.approx(x / 2.5, abs=1e-10)
    assert P0[0, 0] == pytest.approx(1 - x / 2.5, abs=1e-10)


@pytest.mark.parametrize("mu", [-1.0, 0.4, 3.0])
def test_scalar_exit_scale_function(mu):
    p = MmbmParams.from_variance([[0.0]], [mu], [2.0])
    gen = solve_pair(p)
    for x in np.linspace(0, 3, 7):
        P0, Pb = exit_probabilities(p, gen, 3.0, x)
        assert Pb[0, 0] == pytest.approx(scale_exit(mu, 2.0, 3.0, x), abs=1e-10)
        assert P0[0, 0] + Pb[0, 0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("zero", [False, True])
def test_exit_probabilities_against_bvp(zero):
    p = random_params(np.random.default_rng(17), m=3, zero_drift=zero)
    p = MmbmParams(p.Q, p.mu / 5, p.sigma / p.sigma.max() + 0.5)
    b = 1.5
    gen = solve_pair(p)
    xs = [0.2, 0.75, 1.3]
    for x, G in zip(xs, bvp_exit_to_b(p, b, xs)):
        P0, Pb = exit_probabilities(p, gen, b, x)
        assert np.abs(Pb - G).max() <= 1e-7
        assert np.abs((P0 + Pb).sum(axis=1) - 1).max() <= 1e-10


def test_boundary_derivative_matches_L(cyclic_params):
    p = cyclic_params
    gen = solve_pair(p)
    b, h = 20.0, 1e-5
    sol = solve_passage(p, gen, b)
    P0h, Pbh = exit_probabilities(p, gen, b, h)
    P00, Pb0 = exit_probabilities(p, gen, b, 0.0)
    S = np.diag(p.sigma)
    assert np.abs(S @ (Pbh - Pb0) / h - sol.L_b).max() <= 1e-4 * max(1, np.abs(sol.L_b).max())
    assert np.abs(S @ (P0h - P00) / h - sol.P_b).max() <= 1e-4 * max(1, np.abs(sol.P_b).max())


def test_linear_system_holds():
    p = random_params(np.random.default_rng(8), m=4)
    gen = solve_pair(p)
    b = 1.7
    sol = solve_passage(p, gen, b)
    M = coefficient_matrix(gen, b)
    S = np.diag(p.sigma)
    Ub, Uhb = matrix_exp(gen.U * b), matrix_exp(gen.U_hat * b)
    lhs = np.hstack([sol.L_b, sol.P_b]) @ M
    rhs = S @ np.hstack([-gen.U_hat @ Uhb, gen.U])
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1, np.abs(rhs).max())
    lhs = np.hstack([sol.P_hat_b, sol.L_hat_b]) @ M
    rhs = S @ np.hstack([gen.U_hat, -gen.U @ Ub])
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1, np.abs(rhs).max())


def test_corpus_stochastic_and_closed_form():
    for p in CORPUS:
        gen = solve_pair(p)
        b = 0.5 + (abs(p.mu).sum() % 3)
        sol = solve_passage(p, gen, b)
        for H in (sol.H0, sol.Hb):
            assert np.abs(H.sum(axis=1) - 1).max() <= 1e-8
            assert H.min() >= -1e-8
        if gen.drift.kind is not Drift.ZERO:
            for (a, c), (x, y) in (
                (up_closed_form(p, gen, b), (sol.L_b, sol.P_b)),
                (down_closed_form(p, gen, b), (sol.L_hat_b, sol.P_hat_b)),
            ):
                scale = max(1.0, np.abs(x).max(), np.abs(y).max())
                assert np.abs(a - x).max() <= 1e-8 * scale
                assert np.abs(c - y).max() <= 1e-8 * scale


def test_corpus_zero_drift_augmented_residual():
    count = 0
    for p in CORPUS:
        gen = solve_pair(p)
        if gen.drift.kind is not Drift.ZERO:
            continue
        count += 1
        b = 1.25
        sol = solve_passage(p, gen, b)
        m = p.m
        h = group_inverse(p.Q) @ p.mu
        one = np.ones(m)
        M = coefficient_matrix(gen, b)
        S = np.diag(p.sigma)
        R_up = S @ np.hstack([-gen.U_hat @ matrix_exp(gen.U_hat * b), gen.U])
        R_dn = S @ np.hstack([gen.U_hat, -gen.U @ matrix_exp(gen.U * b)])
        c_up = np.concatenate([b * one - h, -h])
        c_dn = np.concatenate([h, b * one + h])
        X_up = np.hstack([sol.L_b, sol.P_b])
        X_dn = np.hstack([sol.P_hat_b, sol.L_hat_b])
        scale = max(1.0, np.abs(R_up).max(), np.abs(R_dn).max())
        assert np.abs(X_up @ M - R_up).max() <= 1e-9 * scale
        assert np.abs(X_dn @ M - R_dn).max() <= 1e-9 * scale
        assert np.abs(X_up @ c_up - p.sigma).max() <= 1e-9 * scale
        assert np.abs(X_dn @ c_dn - p.sigma).max() <= 1e-9 * scale
    assert count == 20


def test_reversal_swaps_legs():
    for p in CORPUS[1:40:3]:
        b = 2.0
        a = solve_passage(p, solve_pair(p), b)
        r = reverse_levels(p)
        c = solve_passage(r, solve_pair(r), b)
        assert np.abs(a.H0 - c.Hb).max() <= 1e-7
        assert np.abs(a.Hb - c.H0).max() <= 1e-7
        assert np.abs(a.L_b - c.L_hat_b).max() <= 1e-7 * max(1, np.abs(a.L_b).max())


def test_up_and_down_routes_are_separate(cyclic_params):
    gen = solve_pair(cyclic_params)
    L, P, H0 = passage_up(cyclic_params, gen, 20.0)
    Lh, Ph, Hb = passage_down(cyclic_params, gen, 20.0)
    assert H0.shape == Hb.shape == (8, 8)
    assert np.abs(H0.sum(axis=1) - 1).max() <= 1e-10
    assert np.abs(Hb.sum(axis=1) - 1).max() <= 1e-10


def test_domain_errors(scalar_neg):
    gen = solve_pair(scalar_neg)
    with pytest.raises(DomainError):
        exit_probabilities(scalar_neg, gen, 4.0, 4.5)
    with pytest.raises(DomainError):
        exit_probabilities(scalar_neg, gen, 4.0, -0.1)
    with pytest.raises(InvalidInputError):
        solve_passage(scalar_neg, gen, 0.0)
    with pytest.raises(InvalidInputError):
        solve_passage(scalar_neg, gen, np.inf)


def test_killed_leg_rejected():
    p = MmbmParams(cyclic_generator(2, 1.0), [1.0, -1.0], [1.0, 1.0], kill_rates=[0.5, 0.5])
    with pytest.raises(InvalidInputError):
        solve_passage(p, solve_pair(p), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans(), st.floats(0.05, 5.0))
def test_property_h_stochastic(seed, m, zero, b):
    p = random_params(np.random.default_rng(seed), m=m, zero_drift=zero)
    sol = solve_passage(p, solve_pair(p), b)
    for H in (sol.H0, sol.Hb):
        assert np.abs(H.sum(axis=1) - 1).max() <= 1e-8
        assert H.min() >= -1e-8


def test_exit_probabilities_at_boundaries(cyclic_params):
    gen = solve_pair(cyclic_params)
    eye = np.eye(8)
    P0, Pb = exit_probabilities(cyclic_params, gen, 20.0, 0.0)
    assert np.abs(P0 - eye).max() <= 1e-10 and np.abs(Pb).max() <= 1e-10
    P0, Pb = exit_probabilities(cyclic_params, gen, 20.0, 20.0)
    assert np.abs(Pb - eye).max() <= 1e-10 and np.abs(P0).max() <= 1e-10


def test_scalar_strong_down_drift():
    p = MmbmParams.from_variance([[0.0]], [-10.0], [10.0])
    sol = solve_passage(p, solve_pair(p), 4.0)
    assert sol.Hb[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert sol.H0[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_near_zero_drift_branches_agree():
    Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    p = MmbmParams(Q, [1.0 + 2e-7, -1.0], [1.0, 1.0])
    gen = solve_pair(p)
    assert gen.drift.kind is Drift.POSITIVE and abs(gen.drift.mean_drift) < 1e-6
    sol = solve_passage(p, gen, 3.0)
    assert sol.warnings == []
    z = MmbmParams(Q, [1.0, -1.0], [1.0, 1.0])
    ref = solve_passage(z, solve_pair(z), 3.0)
    assert np.abs(sol.H0 - ref.H0).max() <= 1e-5
