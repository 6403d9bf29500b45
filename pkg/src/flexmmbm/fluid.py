"""Fast-oscillating fluid approximation, used as an independent oracle.

Each phase ``i`` of the Brownian leg is split into an up copy with rate
``mu_i + sqrt(lam) sigma_i`` and a down copy with rate ``mu_i - sqrt(lam) sigma_i``;
the copies swap at rate ``lam``. As ``lam`` grows the fluid level converges to
the Brownian one, so suitably rescaled fluid sojourn matrices must converge
to the closed-form ``M0(x)`` and ``Mb(x)``. Nothing here reuses ``U`` or
``U_hat``: the fluid side runs on its own Riccati solutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_sylvester

from .errors import ConvergenceError, DomainError, InvalidInputError, UnsupportedCaseError
from .linalg import integral_exp, matrix_exp
from .model import Drift, MmbmParams, classify_drift, reverse_levels
from .passage import solve_passage
from .quadratic import solve_pair
from .sojourn import build_kit, sojourn_down, sojourn_up

RICCATI_TOL = 1e-10
CONVERGENCE_THRESHOLD = 0.02


@dataclass(frozen=True)
class FluidParams:
    lam: float
    T: np.ndarray
    C: np.ndarray
    params: MmbmParams
    drift: Drift

    @property
    def m(self) -> int:
        return self.params.m

    @property
    def C_up(self) -> np.ndarray:
        return self.C[: self.m]

    @property
    def C_down(self) -> np.ndarray:
        return self.C[self.m :]

    def blocks(self):
        m = self.m
        return self.T[:m, :m], self.T[:m, m:], self.T[m:, :m], self.T[m:, m:]


def lambda_threshold(params: MmbmParams) -> float:
    return float(np.max((params.mu / params.sigma) ** 2))


def build_fluid(params: MmbmParams, lam: float) -> FluidParams:
    lam = float(lam)
    lo = lambda_threshold(params)
    if not (np.isfinite(lam) and lam > lo):
        raise InvalidInputError(f"switching rate must exceed {lo:.6g} so that rate signs split cleanly; got {lam}")
    m = params.m
    Q = np.asarray(params.Q)
    eye = np.eye(m)
    T = np.block([[Q - lam * eye, lam * eye], [lam * eye, Q - lam * eye]])
    root = np.sqrt(lam)
    C = np.concatenate([params.mu + root * params.sigma, params.mu - root * params.sigma])
    return FluidParams(lam, T, C, params, classify_drift(params).kind)


def reverse_fluid(fluid: FluidParams) -> FluidParams:
    return build_fluid(reverse_levels(fluid.params), fluid.lam)


def riccati_residual(A, B, D, E, X) -> float:
    return float(np.abs(A + B @ X + X @ D + X @ E @ X).max())


def _newton_riccati(A, B, D, E, max_iter: int = 10_000) -> np.ndarray:
    # minimal nonnegative solution of A + B X + X D + X E X = 0, Newton from 0
    X = np.zeros_like(A)
    res = riccati_residual(A, B, D, E, X)
    stall = 0
    for _ in range(max_iter):
        Xn = solve_sylvester(B + X @ E, D + E @ X, X @ E @ X - A)
        rn = riccati_residual(A, B, D, E, Xn)
        step = np.abs(Xn - X).max()
        X = Xn
        if rn <= RICCATI_TOL and (step <= 1e-15 or rn >= res):
            return X
        stall = stall + 1 if rn >= res else 0
        res = rn
        if stall >= 3:
            break
    if res <= RICCATI_TOL:
        return X
    raise ConvergenceError(f"Riccati iteration stopped with residual {res:.2e}")


def _psi_coefficients(fluid: FluidParams, hat: bool):
    Tuu, Tud, Tdu, Tdd = fluid.blocks()
    cu = 1.0 / fluid.C_up
    cd = 1.0 / np.abs(fluid.C_down)
    if not hat:
        return cu[:, None] * Tud, cu[:, None] * Tuu, cd[:, None] * Tdd, cd[:, None] * Tdu
    return cd[:, None] * Tdu, cd[:, None] * Tdd, cu[:, None] * Tuu, cu[:, None] * Tud


def riccati_psi(fluid: FluidParams) -> np.ndarray:
    """Up-to-down first-return probabilities of the unbounded fluid."""
    return _newton_riccati(*_psi_coefficients(fluid, False))


def riccati_psi_hat(fluid: FluidParams) -> np.ndarray:
    """Down-to-up first-return probabilities of the unbounded fluid."""
    return _newton_riccati(*_psi_coefficients(fluid, True))


def psi_residual(fluid: FluidParams, X, hat: bool = False) -> float:
    return riccati_residual(*_psi_coefficients(fluid, hat), X)


def k_lambda(fluid: FluidParams, psi, psi_hat):
    """Return ``(K_lam, K_hat_lam)``."""
    Tuu, Tud, Tdu, Tdd = fluid.blocks()
    cu = 1.0 / fluid.C_up
    cd = 1.0 / np.abs(fluid.C_down)
    K = cu[:, None] * Tuu + psi @ (cd[:, None] * Tdu)
    K_hat = cd[:, None] * Tdd + psi_hat @ (cu[:, None] * Tud)
    return K, K_hat


@dataclass
class _Solved:
    fluid: FluidParams
    psi: np.ndarray
    psi_hat: np.ndarray
    K: np.ndarray
    K_hat: np.ndarray


def solve_fluid(fluid: FluidParams) -> _Solved:
    psi = riccati_psi(fluid)
    psi_hat = riccati_psi_hat(fluid)
    K, K_hat = k_lambda(fluid, psi, psi_hat)
    return _Solved(fluid, psi, psi_hat, K, K_hat)


def _solved(obj) -> _Solved:
    return obj if isinstance(obj, _Solved) else solve_fluid(obj)


def gamma_zero(fluid, x: float) -> np.ndarray:
    """Mean time in [0, x] per phase (columns up then down) before return to level 0."""
    s = _solved(fluid)
    x = float(x)
    if x < 0:
        raise DomainError(f"x = {x} must be nonnegative")
    f = s.fluid
    right = np.hstack([np.diag(1.0 / f.C_up), s.psi / np.abs(f.C_down)[None, :]])
    return integral_exp(s.K, x, f.drift in (Drift.POSITIVE, Drift.ZERO)) @ right


def gamma_b(fluid, b: float, x: float) -> np.ndarray:
    """Mean time in [0, x] per phase (columns up then down) before return to level b."""
    s = _solved(fluid)
    x, b = float(x), float(b)
    if not (0.0 <= x <= b):
        raise DomainError(f"x = {x} is outside [0, {b}]")
    f = s.fluid
    right = np.hstack([s.psi_hat / f.C_up[None, :], np.diag(1.0 / np.abs(f.C_down))])
    F = integral_exp(s.K_hat, x, f.drift in (Drift.NEGATIVE, Drift.ZERO))
    return matrix_exp(s.K_hat * (b - x)) @ F @ right


def taboo_sojourn(fluid, b: float, x: float):
    """Mean time in [0, x] before the first return to the starting boundary,
    with the opposite boundary taboo. Returns ``(N0, Nb)``."""
    s = _solved(fluid)
    if s.fluid.drift is Drift.ZERO:
        raise UnsupportedCaseError("taboo system is singular at zero mean drift")
    m = s.fluid.m
    eye = np.eye(m)
    Co = np.block([[eye, matrix_exp(s.K * b) @ s.psi], [matrix_exp(s.K_hat * b) @ s.psi_hat, eye]])
    rhs = np.vstack([gamma_zero(s, x), gamma_b(s, b, x)])
    N = np.linalg.solve(Co, rhs)
    return N[:m], N[m:]


@dataclass
class ConvergenceReport:
    lambdas: list
    error_up: list
    error_down: list
    order_up: list
    order_down: list
    passed: bool
    threshold: float = CONVERGENCE_THRESHOLD
    note: str = field(
        default="the relative-error threshold is an engineering choice; the theory only gives the O(1/sqrt(lambda)) rate"
    )

    def rows(self):
        for i, lam in enumerate(self.lambdas):
            yield lam, self.error_up[i], self.error_down[i], self.order_up[i], self.order_down[i]


def fluid_limit_matrices(params: MmbmParams, b: float, x: float, lam: float, passage=None):
    """Rescaled fluid estimates of ``(M0(x), Mb(x))`` at switching rate ``lam``."""
    if passage is None:
        passage = solve_passage(params, solve_pair(params), b)
    N0, Nb = taboo_sojourn(build_fluid(params, lam), b, x)
    m = params.m
    fold = np.vstack([np.eye(m), np.eye(m)])
    root = np.sqrt(lam)
    A = root * np.linalg.solve(-passage.P_b, N0) @ fold
    B = root * np.linalg.solve(-passage.P_hat_b, Nb) @ fold
    return A, B


def convergence_check(params: MmbmParams, b: float, x: float, lambdas) -> ConvergenceReport:
    """Compare the fluid route against the closed forms over increasing ``lambdas``."""
    lambdas = [float(v) for v in lambdas]
    if any(l2 <= l1 for l1, l2 in zip(lambdas, lambdas[1:])):
        raise InvalidInputError("lambdas must be strictly increasing")
    pair = solve_pair(params)
    if pair.drift.kind is Drift.ZERO:
        raise UnsupportedCaseError("the sojourn closed forms are unavailable at zero mean drift")
    passage = solve_passage(params, pair, b)
    kit = build_kit(params, pair, passage)
    M0, Mb = sojourn_up(kit, x), sojourn_down(kit, x)
    n0, nb = np.abs(M0).max(), np.abs(Mb).max()
    eu, ed, ou, od = [], [], [], []
    for i, lam in enumerate(lambdas):
        A, B = fluid_limit_matrices(params, b, x, lam, passage)
        eu.append(float(np.abs(A - M0).max() / n0))
        ed.append(float(np.abs(B - Mb).max() / nb))
        if i == 0:
            ou.append(float("nan"))
            od.append(float("nan"))
        else:
            step = np.log(lam / lambdas[i - 1])
            ou.append(float(np.log(eu[i - 1] / eu[i]) / step))
            od.append(float(np.log(ed[i - 1] / ed[i]) / step))
    decreasing = all(e2 < e1 for e1, e2 in zip(eu, eu[1:])) and all(e2 < e1 for e1, e2 in zip(ed, ed[1:]))
    passed = decreasing and eu[-1] <= CONVERGENCE_THRESHOLD and ed[-1] <= CONVERGENCE_THRESHOLD
    return ConvergenceReport(lambdas, eu, ed, ou, od, passed)
