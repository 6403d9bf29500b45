"""Boundary-to-boundary passage matrices of an MMBM regulated on [0, b].

``H0[i, j]`` is the probability that, starting at level 0 in phase ``i``, the
regulated process first reaches ``b`` in phase ``j``; ``Hb`` is the same for
the trip from ``b`` down to 0. Each is obtained as ``(-P)^{-1} L`` where the
pair ``(L, P)`` solves a 2m-column block linear system built from ``U`` and
``U_hat``. When the mean drift is zero that system loses one rank per row and
an extra linear equation involving the group inverse of ``Q`` pins the
solution down.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InconsistentClassificationError, InvalidInputError, NumericalFailureError
from .linalg import TOL, Tolerances, group_inverse, matrix_exp, solve_left, stationary_vector
from .model import Drift, MmbmParams
from .quadratic import GeneratorPair

NEAR_ZERO_DRIFT = 1e-6
BRANCH_DISAGREEMENT = 1e-5
SYSTEM_RESIDUAL = 1e-9


@dataclass(frozen=True)
class PassageSolution:
    b: float
    L_b: np.ndarray
    P_b: np.ndarray
    H0: np.ndarray
    L_hat_b: np.ndarray
    P_hat_b: np.ndarray
    Hb: np.ndarray
    warnings: list = field(default_factory=list)


def _check_b(b) -> float:
    b = float(b)
    if not (np.isfinite(b) and b > 0):
        raise InvalidInputError(f"strip width b must be positive and finite, got {b}")
    return b


def _require_unkilled(params: MmbmParams):
    if params.killed:
        raise InvalidInputError("passage matrices are defined for the unkilled process only")


def coefficient_matrix(gen: GeneratorPair, b: float) -> np.ndarray:
    """Block matrix [[I, e^{U b}], [e^{U_hat b}, I]] shared by all passage systems."""
    m = gen.U.shape[0]
    eye = np.eye(m)
    return np.block([[eye, matrix_exp(gen.U * b)], [matrix_exp(gen.U_hat * b), eye]])


def _stacked_solve(M, R, c, rhs_c):
    # solve X [M, c] = [R, rhs_c] in the least-squares sense, row by row
    A = np.hstack([M, c[:, None]])
    B = np.hstack([R, rhs_c[:, None]])
    X = np.linalg.lstsq(A.T, B.T, rcond=None)[0].T
    res = np.abs(X @ A - B).max()
    return X, res


def _to_h(L, P, sub_name):
    if not np.abs(P).max() > np.finfo(float).tiny:
        raise NumericalFailureError(
            f"{sub_name} underflows; the opposite boundary is practically unreachable at this drift and width"
        )
    cond = np.linalg.cond(P)
    if not cond < TOL.max_condition:
        raise NumericalFailureError(f"{sub_name} is numerically singular (cond = {cond:.2e})")
    return np.linalg.solve(-P, L)


def up_closed_form(params: MmbmParams, gen: GeneratorPair, b: float):
    """(L_b, P_b) from the explicit inverse formulas; nonzero drift only."""
    m = params.m
    eye = np.eye(m)
    Ds = np.diag(params.sigma)
    U, Uh = gen.U, gen.U_hat
    eU, eUh = matrix_exp(U * b), matrix_exp(Uh * b)
    L = -Ds @ (U + Uh) @ eUh @ np.linalg.inv(eye - eU @ eUh)
    P = Ds @ (U + Uh @ eUh @ eU) @ np.linalg.inv(eye - eUh @ eU)
    return L, P


def down_closed_form(params: MmbmParams, gen: GeneratorPair, b: float):
    """(L_hat_b, P_hat_b) from the explicit inverse formulas; nonzero drift only."""
    m = params.m
    eye = np.eye(m)
    Ds = np.diag(params.sigma)
    U, Uh = gen.U, gen.U_hat
    eU, eUh = matrix_exp(U * b), matrix_exp(Uh * b)
    Lh = -Ds @ (U + Uh) @ eU @ np.linalg.inv(eye - eUh @ eU)
    Ph = Ds @ (Uh + U @ eU @ eUh) @ np.linalg.inv(eye - eU @ eUh)
    return Lh, Ph


def _deviation_drift(params: MmbmParams) -> np.ndarray:
    # Q^# mu, used by the zero-drift side equations
    return group_inverse(params.Q, stationary_vector(params.Q)) @ params.mu


def passage_up(params: MmbmParams, gen: GeneratorPair, b: float, tol: Tolerances = TOL, warnings=None):
    """Return ``(L_b, P_b, H0)`` for the trip from level 0 to level ``b``."""
    _require_unkilled(params)
    b = _check_b(b)
    m = params.m
    Ds = np.diag(params.sigma)
    U, Uh = gen.U, gen.U_hat
    M = coefficient_matrix(gen, b)
    eUh = M[m:, :m]
    R = Ds @ np.hstack([-Uh @ eUh, U])
    warnings = [] if warnings is None else warnings

    def augmented():
        g = _deviation_drift(params)
        c = np.concatenate([b * np.ones(m) - g, -g])
        X, res = _stacked_solve(M, R, c, params.sigma)
        if res > SYSTEM_RESIDUAL:
            raise NumericalFailureError(f"zero-drift passage system is inconsistent (residual {res:.2e})")
        return X[:, :m], X[:, m:]

    if gen.drift.kind is Drift.ZERO:
        L, P = augmented()
    else:
        cond = np.linalg.cond(M)
        if not cond < tol.max_condition:
            raise InconsistentClassificationError(
                f"drift classified {gen.drift.kind.value} but the passage system is singular (cond = {cond:.2e})"
            )
        X = solve_left(R, M)
        L, P = X[:, :m], X[:, m:]
        if abs(gen.drift.mean_drift) < NEAR_ZERO_DRIFT:
            L0, P0 = augmented()
            gap = max(np.abs(L - L0).max(), np.abs(P - P0).max())
            if gap > BRANCH_DISAGREEMENT:
                warnings.append(
                    f"near-zero drift ({gen.drift.mean_drift:.2e}): up-leg branches differ by {gap:.2e}"
                )
    return L, P, _to_h(L, P, "P_b")


def passage_down(params: MmbmParams, gen: GeneratorPair, b: float, tol: Tolerances = TOL, warnings=None):
    """Return ``(L_hat_b, P_hat_b, Hb)`` for the trip from level ``b`` to level 0."""
    _require_unkilled(params)
    b = _check_b(b)
    m = params.m
    Ds = np.diag(params.sigma)
    U, Uh = gen.U, gen.U_hat
    M = coefficient_matrix(gen, b)
    eU = M[:m, m:]
    R = Ds @ np.hstack([Uh, -U @ eU])
    warnings = [] if warnings is None else warnings

    def augmented():
        g = _deviation_drift(params)
        # unknowns ordered (P_hat, L_hat)
        c = np.concatenate([g, b * np.ones(m) + g])
        X, res = _stacked_solve(M, R, c, params.sigma)
        if res > SYSTEM_RESIDUAL:
            raise NumericalFailureError(f"zero-drift passage system is inconsistent (residual {res:.2e})")
        return X[:, m:], X[:, :m]

    if gen.drift.kind is Drift.ZERO:
        Lh, Ph = augmented()
    else:
        cond = np.linalg.cond(M)
        if not cond < tol.max_condition:
            raise InconsistentClassificationError(
                f"drift classified {gen.drift.kind.value} but the passage system is singular (cond = {cond:.2e})"
            )
        X = solve_left(R, M)
        Ph, Lh = X[:, :m], X[:, m:]
        if abs(gen.drift.mean_drift) < NEAR_ZERO_DRIFT:
            Lh0, Ph0 = augmented()
            gap = max(np.abs(Lh - Lh0).max(), np.abs(Ph - Ph0).max())
            if gap > BRANCH_DISAGREEMENT:
                warnings.append(
                    f"near-zero drift ({gen.drift.mean_drift:.2e}): down-leg branches differ by {gap:.2e}"
                )
    return Lh, Ph, _to_h(Lh, Ph, "P_hat_b")


def solve_passage(params: MmbmParams, gen: GeneratorPair, b: float, tol: Tolerances = TOL) -> PassageSolution:
    warnings: list = []
    L, P, H0 = passage_up(params, gen, b, tol, warnings)
    Lh, Ph, Hb = passage_down(params, gen, b, tol, warnings)
    return PassageSolution(float(b), L, P, H0, Lh, Ph, Hb, warnings)


def exit_probabilities(params: MmbmParams, gen: GeneratorPair, b: float, x: float):
    """Two-sided exit matrices ``(P(x, 0), P(x, b))`` of the free process started at ``x``."""
    _require_unkilled(params)
    b = _check_b(b)
    x = float(x)
    if not (0.0 <= x <= b):
        raise DomainError(f"x = {x} is outside [0, {b}]")
    m = params.m
    M = coefficient_matrix(gen, b)
    R = np.hstack([matrix_exp(gen.U_hat * (b - x)), matrix_exp(gen.U * x)])
    if gen.drift.kind is Drift.ZERO:
        h = -_deviation_drift(params)
        one = np.ones(m)
        c = np.concatenate([(b - x) * one + h, -x * one + h])
        X, res = _stacked_solve(M, R, c, h)
        if res > SYSTEM_RESIDUAL:
            raise NumericalFailureError(f"zero-drift exit system is inconsistent (residual {res:.2e})")
    else:
        X = solve_left(R, M)
    return X[:, m:], X[:, :m]
