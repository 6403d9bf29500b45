"""Single-leg Markov-modulated Brownian motion parameters.

A leg is described by a phase generator ``Q``, per-phase drifts ``mu`` and
per-phase volatilities ``sigma`` (standard deviations, not variances), plus an
optional vector of killing rates used only by the quadratic solver.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParamsError, ReducibleGeneratorError
from .linalg import TOL, check_generator, is_irreducible, stationary_vector


class Drift(enum.Enum):
    NEGATIVE = "negative"
    ZERO = "zero"
    POSITIVE = "positive"


@dataclass(frozen=True)
class DriftClass:
    kind: Drift
    mean_drift: float

    @property
    def is_zero(self) -> bool:
        return self.kind is Drift.ZERO


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MmbmParams:
    """Generator ``Q`` (m x m), drift ``mu`` (m,), volatility ``sigma`` (m,).

    Arrays are copied and made read-only; construction validates.
    """

    Q: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    kill_rates: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "Q", _frozen(np.atleast_2d(self.Q)))
        object.__setattr__(self, "mu", _frozen(np.atleast_1d(self.mu)))
        object.__setattr__(self, "sigma", _frozen(np.atleast_1d(self.sigma)))
        r = np.zeros(self.mu.shape) if self.kill_rates is None else self.kill_rates
        object.__setattr__(self, "kill_rates", _frozen(np.atleast_1d(r)))
        validate(self)

    @classmethod
    def from_variance(cls, Q, mu, sigma2, kill_rates=None) -> "MmbmParams":
        sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
        if np.any(~(sigma2 > 0)):
            i = int(np.argmin(sigma2 > 0))
            raise InvalidParamsError(f"sigma must be strictly positive (phase {i + 1})")
        return cls(Q, mu, np.sqrt(sigma2), kill_rates)

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma2(self) -> np.ndarray:
        return self.sigma**2

    @property
    def killed(self) -> bool:
        return bool(np.any(self.kill_rates > 0))

    def __eq__(self, other):
        if not isinstance(other, MmbmParams):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("Q", "mu", "sigma", "kill_rates")
        )

    def __hash__(self):
        return hash((self.Q.tobytes(), self.mu.tobytes(), self.sigma.tobytes(), self.kill_rates.tobytes()))

    def to_dict(self) -> dict:
        d = {"Q": self.Q.tolist(), "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}
        if self.killed:
            d["kill_rates"] = self.kill_rates.tolist()
        return d


def validate(params: MmbmParams) -> None:
    """Raise :class:`InvalidParamsError` naming the first violated invariant."""
    Q, mu, sigma, r = params.Q, params.mu, params.sigma, params.kill_rates
    m = mu.shape[0]
    if mu.ndim != 1 or m < 1:
        raise InvalidParamsError("mu must be a non-empty vector")
    if Q.shape != (m, m):
        raise InvalidParamsError(f"Q has shape {Q.shape}, expected ({m}, {m})")
    if sigma.shape != (m,):
        raise InvalidParamsError(f"sigma has shape {sigma.shape}, expected ({m},)")
    if r.shape != (m,):
        raise InvalidParamsError(f"kill_rates has shape {r.shape}, expected ({m},)")
    for name, a in (("mu", mu), ("sigma", sigma), ("kill_rates", r)):
        if not np.all(np.isfinite(a)):
            i = int(np.argmin(np.isfinite(a)))
            raise InvalidParamsError(f"{name} has a non-finite entry at phase {i + 1}")
    bad = np.flatnonzero(~(sigma > 0))
    if bad.size:
        raise InvalidParamsError(f"sigma must be strictly positive (phase {bad[0] + 1})")
    bad = np.flatnonzero(r < 0)
    if bad.size:
        raise InvalidParamsError(f"kill_rates must be nonnegative (phase {bad[0] + 1})")
    try:
        check_generator(Q, "Q")
    except InvalidInputError as exc:
        raise InvalidParamsError(str(exc)) from None


def classify_drift(params: MmbmParams, tol: float = TOL.drift) -> DriftClass:
    """Sign of the stationary mean drift alpha @ mu, with tolerance ``tol``."""
    if not is_irreducible(params.Q):
        raise ReducibleGeneratorError("Q is reducible; drift classification needs an irreducible generator")
    d = float(stationary_vector(params.Q) @ params.mu)
    if d < -tol:
        kind = Drift.NEGATIVE
    elif d > tol:
        kind = Drift.POSITIVE
    else:
        kind = Drift.ZERO
    return DriftClass(kind, d)


def reverse_levels(params: MmbmParams) -> MmbmParams:
    """Level-reversed leg: same Q, sigma and kill rates, drift negated."""
    return MmbmParams(params.Q, -params.mu, params.sigma, params.kill_rates)
