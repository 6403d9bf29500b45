"""Dense small-matrix primitives used by every analytic module.

Matrices here are small (a few dozen phases at most), so everything is dense
numpy/scipy. The one numerical subtlety is the integral of a matrix
exponential when the matrix carries a simple zero eigenvalue; the caller
decides which branch applies from the drift sign, never by a rank test.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import (
    BranchMismatchError,
    InvalidInputError,
    NumericalFailureError,
    ReducibleGeneratorError,
)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by the analytic modules."""

    residual: float = 1e-10
    eigen_split: float = 1e-8
    drift: float = 1e-10
    singular: float = 1e-10
    max_condition: float = 1e12
    null_normalization: float = 1e-12
    generator_rows: float = 1e-12


TOL = Tolerances()


def as_square(A, name: str = "A") -> np.ndarray:
    """Return ``A`` as a finite float64 square matrix or raise."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def matrix_exp(A) -> np.ndarray:
    """Matrix exponential e^A (scaling and squaring with a Pade approximant)."""
    return scipy.linalg.expm(as_square(A))


def _null_vectors(A: np.ndarray, tol: Tolerances = TOL) -> tuple[np.ndarray, np.ndarray]:
    # right/left eigenvectors at the eigenvalue of minimal modulus, u @ v = 1
    w, VL, VR = scipy.linalg.eig(A, left=True, right=True)
    k = int(np.argmin(np.abs(w)))
    v = VR[:, k]
    u = VL[:, k].conj()
    # the zero eigenvalue of a real matrix has real eigenvectors up to a phase
    v = np.real(v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))])))
    u = np.real(u * np.exp(-1j * np.angle(u[np.argmax(np.abs(u))])))
    s = u @ v
    if abs(s) < tol.null_normalization * np.linalg.norm(u) * np.linalg.norm(v):
        raise NumericalFailureError("left and right null vectors are orthogonal; zero eigenvalue is not simple")
    return v / s, u


def group_inverse_simple_zero(A, tol: Tolerances = TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Group inverse of a matrix with a simple zero eigenvalue.

    Returns ``(A_sharp, v, u)`` with ``v``, ``u`` the right and left null
    vectors scaled so that ``u @ v = 1``. Uses A# = (A - v u)^{-1} + v u.
    """
    A = as_square(A)
    v, u = _null_vectors(A, tol)
    proj = np.outer(v, u)
    return np.linalg.inv(A - proj) + proj, v, u


def integral_exp(A, x: float, singular: bool, tol: Tolerances = TOL) -> np.ndarray:
    """Return F(A; x) = int_0^x e^{Au} du.

    ``singular`` selects the branch: False requires every eigenvalue of ``A``
    to have negative real part, True requires exactly one zero eigenvalue.
    """
    A = as_square(A)
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise InvalidInputError(f"x must be a finite nonnegative number, got {x}")
    m = A.shape[0]
    if x == 0.0:
        return np.zeros((m, m))
    eye = np.eye(m)
    if not singular:
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] < tol.singular * max(sv[0], 1.0):
            raise BranchMismatchError("nonsingular branch requested for a numerically singular matrix")
        return np.linalg.solve(-A, eye - matrix_exp(A * x))
    A_sharp, v, u = group_inverse_simple_zero(A, tol)
    return -A_sharp @ (eye - matrix_exp(A * x)) + x * np.outer(v, u)


def is_irreducible(Q) -> bool:
    """Strong connectivity of the positive off-diagonal pattern of ``Q``."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] == 1:
        return True
    adj = (Q > 0).astype(int)
    np.fill_diagonal(adj, 0)
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


def check_generator(Q, name: str = "Q", tol: Tolerances = TOL) -> np.ndarray:
    """Validate that ``Q`` is a generator (nonnegative off-diagonal, zero row sums)."""
    Q = as_square(Q, name)
    off = Q - np.diag(np.diag(Q))
    bad = np.argwhere(off < 0)
    if bad.size:
        i, j = bad[0]
        raise InvalidInputError(f"{name}[{i + 1},{j + 1}] is negative off the diagonal")
    rows = Q.sum(axis=1)
    scale = max(1.0, np.abs(Q).max())
    for i, r in enumerate(rows):
        if abs(r) > tol.generator_rows * scale:
            raise InvalidInputError(f"row {i + 1} of {name} does not sum to zero (sum = {r:.3g})")
    return Q


def stationary_vector(Q, tol: Tolerances = TOL) -> np.ndarray:
    """Stationary probability row vector of an irreducible generator."""
    Q = as_square(Q, "Q")
    if not is_irreducible(Q):
        raise ReducibleGeneratorError("generator is reducible; stationary vector is not unique")
    m = Q.shape[0]
    if m == 1:
        return np.ones(1)
    # replace one balance equation by the normalisation
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    alpha = np.linalg.solve(A, rhs)
    # one refinement step against roundoff on stiff generators
    alpha = alpha + np.linalg.solve(A, rhs - A @ alpha)
    if np.any(alpha <= 0):
        raise NumericalFailureError("stationary vector has nonpositive entries")
    return alpha / alpha.sum()


def group_inverse(Q, alpha=None, tol: Tolerances = TOL) -> np.ndarray:
    """Group inverse Q# of an irreducible generator.

    Q# is the unique solution of X Q = I - 1 alpha, X 1 = 0; computed as
    (Q - 1 alpha)^{-1} + 1 alpha.
    """
    Q = as_square(Q, "Q")
    m = Q.shape[0]
    if alpha is None:
        alpha = stationary_vector(Q, tol)
    alpha = np.asarray(alpha, dtype=float)
    proj = np.outer(np.ones(m), alpha)
    B = Q - proj
    if np.linalg.cond(B) > tol.max_condition:
        raise NumericalFailureError("group inverse system is rank deficient")
    X = np.linalg.inv(B) + proj
    res = max(np.abs(X @ Q - (np.eye(m) - proj)).max(), np.abs(X.sum(axis=1)).max())
    if res > 1e3 * tol.residual * max(1.0, np.abs(X).max()):
        raise NumericalFailureError(f"group inverse residual {res:.2e} too large")
    return X


def solve_left(X_rhs, M) -> np.ndarray:
    """Solve X M = R for X (row-block systems of the passage equations)."""
    return np.linalg.solve(np.asarray(M).T, np.asarray(X_rhs).T).T


def perron_left(P, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Left Perron vector (probability normalised) of an irreducible stochastic matrix.

    Dense eigendecomposition first; power iteration when the eigenvector is
    not clean (near-reducible matrices).
    """
    P = as_square(P, "P")
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    w, V = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    v = np.real(V[:, k])
    v = v / v.sum()
    if abs(w[k] - 1.0) < 1e-9 and np.all(v > 0) and np.abs(v @ P - v).max() < 1e-10:
        return v
    v = np.full(n, 1.0 / n)
    # lazy chain avoids oscillation on periodic matrices
    lazy = 0.5 * (P + np.eye(n))
    for _ in range(max_iter):
        nxt = v @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt - v).max() < tol:
            return nxt
        v = nxt
    raise NumericalFailureError("power iteration for the Perron vector did not converge")
