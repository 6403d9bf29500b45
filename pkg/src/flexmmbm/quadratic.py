"""Extremal solutions of the matrix quadratic  S X^2 + 2 D X + 2 (Q - R) = 0.

Here ``S = diag(sigma^2)``, ``D = diag(mu)`` and ``R = diag(kill_rates)``.
``U`` is the minimal solution, built from the roots of
``det(S z^2 + 2 D z + 2 (Q - R))`` in the closed left half-plane; ``-U_hat`` is
the maximal solution, built from the roots in the closed right half-plane.
Equivalently ``U_hat`` solves ``S X^2 - 2 D X + 2 (Q - R) = 0``, so the pair
swaps under level reversal.

Without killing the determinant always vanishes at z = 0 (Q is singular) and
the drift sign decides where that root goes: to ``U`` when the mean drift is
negative, to ``-U_hat`` when positive, to both when zero. The matching
eigenvector is the constant vector, which makes the corresponding row sums
vanish exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SolverFailureError
from .linalg import TOL, Tolerances
from .model import Drift, DriftClass, MmbmParams, classify_drift

RESIDUAL_MAX = 1e-8


@dataclass(frozen=True)
class GeneratorPair:
    U: np.ndarray
    U_hat: np.ndarray
    drift: DriftClass | None
    residual_U: float
    residual_U_hat: float
    method: str = "eig"


def quadratic_residual(params: MmbmParams, X, sign: int = 1) -> float:
    """Infinity norm of S X^2 + 2 sign D X + 2 (Q - R)."""
    S = np.diag(params.sigma2)
    D = np.diag(params.mu)
    R = np.diag(params.kill_rates)
    E = S @ X @ X + 2.0 * sign * D @ X + 2.0 * (params.Q - R)
    return float(np.abs(E).sum(axis=1).max())


def _companion(params: MmbmParams):
    m = params.m
    inv_s = 1.0 / params.sigma2
    A0 = 2.0 * (params.Q - np.diag(params.kill_rates))
    C = np.zeros((2 * m, 2 * m))
    C[:m, m:] = np.eye(m)
    C[m:, :m] = -inv_s[:, None] * A0
    C[m:, m:] = -np.diag(2.0 * params.mu * inv_s)
    return C


def _split_roots(params: MmbmParams, drift: DriftClass | None, tol: Tolerances):
    """Return (vals_U, vecs_U, vals_Uhat_neg, vecs) where ``vals_Uhat_neg`` are roots of -U_hat."""
    m = params.m
    w, V = scipy.linalg.eig(_companion(params))
    V = V[:m, :]
    idx = np.arange(2 * m)
    left_extra, right_extra = [], []
    if drift is not None:
        nz = 2 if drift.kind is Drift.ZERO else 1
        zero_idx = np.argsort(np.abs(w))[:nz]
        idx = np.setdiff1d(idx, zero_idx)
        one = np.ones(m)
        if drift.kind in (Drift.NEGATIVE, Drift.ZERO):
            left_extra.append(one)
        if drift.kind in (Drift.POSITIVE, Drift.ZERO):
            right_extra.append(one)
    re = w[idx].real
    scale = max(1.0, np.abs(w).max())
    if np.any(np.abs(re) < tol.eigen_split * scale):
        msg = "a non-structural root lies on the imaginary axis; the spectral split is ambiguous"
        if drift is not None and not drift.is_zero:
            msg += (
                f" (mean drift {drift.mean_drift:.3g} is nonzero but too small to separate the roots;"
                " raise the drift tolerance to treat the leg as driftless)"
            )
        raise SolverFailureError(msg)
    left = idx[re < 0]
    right = idx[re > 0]
    if len(left) + len(left_extra) != m or len(right) + len(right_extra) != m:
        raise SolverFailureError(
            f"root count mismatch: {len(left) + len(left_extra)} left and "
            f"{len(right) + len(right_extra)} right roots for m = {m}"
        )
    return (
        np.concatenate([w[left], np.zeros(len(left_extra))]),
        np.column_stack([V[:, left]] + [e[:, None] for e in left_extra]),
        np.concatenate([w[right], np.zeros(len(right_extra))]),
        np.column_stack([V[:, right]] + [e[:, None] for e in right_extra]),
    )


def _reconstruct(vals, vecs, tol: Tolerances, check: bool = True) -> np.ndarray:
    cond = np.linalg.cond(vecs)
    if check and not cond < tol.max_condition:
        raise SolverFailureError(
            f"eigenvector basis is ill-conditioned (cond = {cond:.2e}); retry with method='newton'"
        )
    X = np.linalg.solve(vecs.T, (vecs * vals).T).T
    if np.abs(X.imag).max() > 1e-6 * max(1.0, np.abs(X.real).max()):
        raise SolverFailureError("reconstructed solution is not real")
    return X.real


def _newton(X, S, D2, Q2, zero_rows: bool, steps: int, tol: float) -> np.ndarray:
    # Newton on S X^2 + D2 X + Q2 = 0; with zero_rows also drive X 1 to 0
    m = X.shape[0]
    eye = np.eye(m)

    def merit(Y):
        R = S @ Y @ Y + D2 @ Y + Q2
        err = np.abs(R).max()
        if zero_rows:
            err = max(err, np.abs(Y.sum(axis=1)).max())
        return R, err

    R, err = merit(X)
    for _ in range(steps):
        if err <= tol:
            break
        J = np.kron(eye, S @ X) + np.kron(X.T, S) + np.kron(eye, D2)
        rhs = -R.reshape(-1, order="F")
        if zero_rows:
            # row i of the update sums to -(X 1)_i
            J = np.vstack([J, np.kron(np.ones((1, m)), eye)])
            rhs = np.concatenate([rhs, -X.sum(axis=1)])
        e = np.linalg.lstsq(J, rhs, rcond=None)[0]
        Xn = X + e.reshape(m, m, order="F")
        Rn, err_n = merit(Xn)
        if not err_n < err:
            break
        X, R, err = Xn, Rn, err_n
    return X


def solve_pair(
    params: MmbmParams, method: str = "eig", tol: Tolerances = TOL, polish_steps: int = 4
) -> GeneratorPair:
    """Compute ``U`` and ``U_hat`` for one leg.

    ``method="eig"`` reconstructs both solutions from the companion
    eigendecomposition and refines them with a few Newton steps.
    ``method="newton"`` skips the conditioning check on the eigenvector basis
    and relies on Newton iterations to reach the residual bound; use it when
    the eigenbasis is nearly defective.
    """
    if method not in ("eig", "newton"):
        raise ValueError(f"unknown method {method!r}")
    r = params.kill_rates
    if np.any(r > 0) and not np.all(r > 0):
        raise SolverFailureError(
            "kill rates must be all zero or all strictly positive; mixed rates are not supported"
        )
    drift = None if params.killed else classify_drift(params, tol.drift)
    vals_u, vecs_u, vals_h, vecs_h = _split_roots(params, drift, tol)
    check = method == "eig"
    U = _reconstruct(vals_u, vecs_u, tol, check)
    U_hat = -_reconstruct(vals_h, vecs_h, tol, check)

    S = np.diag(params.sigma2)
    D = np.diag(params.mu)
    Q2 = 2.0 * (params.Q - np.diag(r))
    steps = polish_steps if method == "eig" else 50
    zero_u = drift is not None and drift.kind in (Drift.NEGATIVE, Drift.ZERO)
    zero_h = drift is not None and drift.kind in (Drift.POSITIVE, Drift.ZERO)
    target = 1e-3 * RESIDUAL_MAX
    U = _newton(U, S, 2.0 * D, Q2, zero_u, steps, target)
    U_hat = _newton(U_hat, S, -2.0 * D, Q2, zero_h, steps, target)

    res_u = quadratic_residual(params, U, 1)
    res_h = quadratic_residual(params, U_hat, -1)
    if not max(res_u, res_h) <= RESIDUAL_MAX:
        raise SolverFailureError(
            f"quadratic residuals too large (U: {res_u:.2e}, U_hat: {res_h:.2e})"
            + ("; retry with method='newton'" if method == "eig" else "")
        )
    return GeneratorPair(U, U_hat, drift, res_u, res_h, method)


def swap(pair: GeneratorPair) -> GeneratorPair:
    """Pair of the level-reversed leg: U and U_hat exchanged, drift negated."""
    drift = None
    if pair.drift is not None:
        kind = {Drift.NEGATIVE: Drift.POSITIVE, Drift.POSITIVE: Drift.NEGATIVE}.get(pair.drift.kind, Drift.ZERO)
        drift = DriftClass(kind, -pair.drift.mean_drift)
    return GeneratorPair(pair.U_hat, pair.U, drift, pair.residual_U_hat, pair.residual_U, pair.method)
