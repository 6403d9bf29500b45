"""Expected sojourn times in [0, x] during boundary-to-boundary excursions.

``M0(x)[i, j]`` is the expected time spent in ``[0, x]`` in phase ``j`` during
a trip of the regulated process from level 0 (phase ``i``) to level ``b``;
``Mb(x)`` is the same for the trip from ``b`` down to 0. Both are closed-form
expressions in the similarity-shifted matrices ``K`` and ``K_hat``. The
formulas require a nonzero mean drift; at zero drift the characterization is
incomplete and the module refuses to answer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedCaseError
from .linalg import integral_exp, matrix_exp
from .model import Drift, MmbmParams
from .passage import PassageSolution, solve_passage
from .quadratic import GeneratorPair


@dataclass(frozen=True)
class SojournKit:
    K: np.ndarray
    K_hat: np.ndarray
    b: float
    P_b: np.ndarray
    P_hat_b: np.ndarray
    sigma: np.ndarray
    drift: Drift
    passage: PassageSolution

    @property
    def m(self) -> int:
        return self.K.shape[0]

    @property
    def K_singular(self) -> bool:
        return self.drift is Drift.POSITIVE

    @property
    def K_hat_singular(self) -> bool:
        return self.drift is Drift.NEGATIVE


def k_matrices(params: MmbmParams, gen: GeneratorPair):
    """Return ``(K, K_hat)``."""
    s = params.sigma
    shift = 2.0 * params.mu / params.sigma2
    K = (s[:, None] * gen.U / s[None, :]) + np.diag(shift)
    K_hat = (s[:, None] * gen.U_hat / s[None, :]) - np.diag(shift)
    return K, K_hat


def build_kit(params: MmbmParams, gen: GeneratorPair, passage: PassageSolution | None = None, b: float | None = None) -> SojournKit:
    if gen.drift is None or gen.drift.kind is Drift.ZERO:
        raise UnsupportedCaseError(
            "expected sojourn times are not available at zero mean drift: the boundary system "
            "is singular and no closing equation is known"
        )
    if passage is None:
        if b is None:
            raise ValueError("either passage or b is required")
        passage = solve_passage(params, gen, b)
    K, K_hat = k_matrices(params, gen)
    return SojournKit(
        K, K_hat, passage.b, passage.P_b, passage.P_hat_b, np.array(params.sigma), gen.drift.kind, passage
    )


def _check_x(kit: SojournKit, x) -> float:
    x = float(x)
    if not (0.0 <= x <= kit.b):
        raise DomainError(f"x = {x} is outside [0, {kit.b}]")
    return x


def _F(kit: SojournKit, x: float):
    return (
        integral_exp(kit.K, x, kit.K_singular),
        integral_exp(kit.K_hat, x, kit.K_hat_singular),
    )


def sojourn_up(kit: SojournKit, x: float) -> np.ndarray:
    """M0(x): expected time in [0, x] per arrival phase during a 0 -> b excursion."""
    x = _check_x(kit, x)
    b = kit.b
    eye = np.eye(kit.m)
    FK, FKh = _F(kit, x)
    eKb = matrix_exp(kit.K * b)
    inner = FK - eKb @ matrix_exp(kit.K_hat * (b - x)) @ FKh
    core = np.linalg.solve(eye - eKb @ matrix_exp(kit.K_hat * b), inner)
    return 2.0 * np.linalg.solve(-kit.P_b, core) / kit.sigma[None, :]


def sojourn_down(kit: SojournKit, x: float) -> np.ndarray:
    """Mb(x): expected time in [0, x] per arrival phase during a b -> 0 excursion."""
    x = _check_x(kit, x)
    b = kit.b
    eye = np.eye(kit.m)
    FK, FKh = _F(kit, x)
    inner = matrix_exp(kit.K_hat * (b - x)) @ (FKh - matrix_exp(kit.K_hat * x) @ FK)
    core = np.linalg.solve(eye - matrix_exp(kit.K_hat * b) @ matrix_exp(kit.K * b), inner)
    return 2.0 * np.linalg.solve(-kit.P_hat_b, core) / kit.sigma[None, :]


def excursion_times(kit: SojournKit):
    """Expected excursion durations per starting phase: (M0(b) 1, Mb(b) 1)."""
    return sojourn_up(kit, kit.b).sum(axis=1), sojourn_down(kit, kit.b).sum(axis=1)


def clamp_output(M, floor: float = -1e-9) -> np.ndarray:
    """Clip roundoff negatives (>= ``floor``) to zero for user-facing output."""
    M = np.array(M, dtype=float)
    M[(M < 0) & (M >= floor)] = 0.0
    return M
