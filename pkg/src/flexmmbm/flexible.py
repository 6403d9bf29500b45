"""Stationary distribution of a two-leg MMBM with phase resampling at the boundaries.

The process alternates between an up-leg (from 0 until it first hits ``b``)
and a down-leg (from ``b`` until it first hits 0). Each leg has its own phase
set and dynamics. At a hit of ``b`` the phase is redrawn with ``P_ud``; at a
hit of 0 it is redrawn with ``P_du``. Boundary-hit epochs are regeneration
points, so the stationary distribution is a ratio of expected sojourn times
weighted by the stationary law of the embedded phase chain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolationError, DomainError, InvalidParamsError, NumericalFailureError, UnsupportedCaseError
from .linalg import is_irreducible, perron_left
from .model import Drift, MmbmParams
from .passage import PassageSolution, solve_passage
from .quadratic import GeneratorPair, solve_pair
from .sojourn import SojournKit, build_kit, sojourn_down, sojourn_up

FIXED_POINT_TOL = 1e-9


def _check_stochastic(P, shape, name) -> np.ndarray:
    P = np.array(P, dtype=float)
    if P.shape != shape:
        raise InvalidParamsError(f"{name} has shape {P.shape}, expected {shape}")
    if not np.all(np.isfinite(P)):
        raise InvalidParamsError(f"{name} has non-finite entries")
    bad = np.argwhere(P < 0)
    if bad.size:
        i, j = bad[0]
        raise InvalidParamsError(f"{name}[{i + 1},{j + 1}] is negative")
    rows = P.sum(axis=1)
    for i, r in enumerate(rows):
        if abs(r - 1.0) > 1e-12:
            raise InvalidParamsError(f"row {i + 1} of {name} does not sum to one (sum = {r:.15g})")
    P.setflags(write=False)
    return P


@dataclass(frozen=True, eq=False)
class FlexibleModel:
    """Two-leg model on the strip [0, b]."""

    b: float
    up: MmbmParams
    down: MmbmParams
    P_ud: np.ndarray
    P_du: np.ndarray

    def __post_init__(self):
        b = float(self.b)
        if not (np.isfinite(b) and b > 0):
            raise InvalidParamsError(f"strip width b must be positive, got {self.b}")
        object.__setattr__(self, "b", b)
        for name, leg in (("up", self.up), ("down", self.down)):
            if not isinstance(leg, MmbmParams):
                raise InvalidParamsError(f"{name} leg must be MmbmParams")
            if leg.killed:
                raise InvalidParamsError(f"{name} leg must not carry kill rates")
            if not is_irreducible(leg.Q):
                raise InvalidParamsError(f"{name}-leg generator is reducible")
        mu, md = self.up.m, self.down.m
        object.__setattr__(self, "P_ud", _check_stochastic(self.P_ud, (mu, md), "P_ud"))
        object.__setattr__(self, "P_du", _check_stochastic(self.P_du, (md, mu), "P_du"))

    @classmethod
    def symmetric(cls, b, leg: MmbmParams, down: MmbmParams | None = None) -> "FlexibleModel":
        """Model with identity switching; ``down`` defaults to ``leg``."""
        down = leg if down is None else down
        if down.m != leg.m:
            raise InvalidParamsError("identity switching needs legs with equal phase counts")
        eye = np.eye(leg.m)
        return cls(b, leg, down, eye, eye)

    def __eq__(self, other):
        if not isinstance(other, FlexibleModel):
            return NotImplemented
        return (
            self.b == other.b
            and self.up == other.up
            and self.down == other.down
            and np.array_equal(self.P_ud, other.P_ud)
            and np.array_equal(self.P_du, other.P_du)
        )

    __hash__ = None


@dataclass(frozen=True)
class LegSolution:
    params: MmbmParams
    pair: GeneratorPair
    passage: PassageSolution
    kit: SojournKit


def solve_leg(params: MmbmParams, b: float, name: str = "leg") -> LegSolution:
    pair = solve_pair(params)
    if pair.drift.kind is Drift.ZERO:
        raise UnsupportedCaseError(
            f"{name} has zero mean drift; expected sojourn times are not available in that case"
        )
    passage = solve_passage(params, pair, b)
    return LegSolution(params, pair, passage, build_kit(params, pair, passage))


@dataclass(frozen=True)
class StationaryDistribution:
    nu_u: np.ndarray
    nu_d: np.ndarray
    normalizer: float
    b: float
    up: LegSolution
    down: LegSolution

    @property
    def H0_up(self) -> np.ndarray:
        return self.up.passage.H0

    @property
    def Hb_down(self) -> np.ndarray:
        return self.down.passage.Hb

    def M0_up(self, x) -> np.ndarray:
        return sojourn_up(self.up.kit, x)

    def Mb_down(self, x) -> np.ndarray:
        return sojourn_down(self.down.kit, x)


def _from_nu(model: FlexibleModel, up: LegSolution, down: LegSolution, nu_u) -> StationaryDistribution:
    nu_u = np.asarray(nu_u, dtype=float)
    nu_d = nu_u @ up.passage.H0 @ model.P_ud
    b = model.b
    norm = float(nu_u @ sojourn_up(up.kit, b).sum(axis=1) + nu_d @ sojourn_down(down.kit, b).sum(axis=1))
    if not (np.isfinite(norm) and norm > 0):
        raise NumericalFailureError(f"mean cycle length is not a finite positive number ({norm})")
    return StationaryDistribution(nu_u, nu_d, norm, b, up, down)


def distribution_from_nu(dist: StationaryDistribution, model: FlexibleModel, nu_u) -> StationaryDistribution:
    """Rebuild ``dist`` from an arbitrary positive multiple of the embedded vector."""
    return _from_nu(model, dist.up, dist.down, nu_u)


def cycle_matrix(model: FlexibleModel, up: LegSolution, down: LegSolution) -> np.ndarray:
    """Phase transition matrix at successive hits of 0 (start of an up-leg)."""
    return up.passage.H0 @ model.P_ud @ down.passage.Hb @ model.P_du


def assemble(model: FlexibleModel) -> StationaryDistribution:
    up = solve_leg(model.up, model.b, "up-leg")
    down = solve_leg(model.down, model.b, "down-leg")
    A = cycle_matrix(model, up, down)
    if not is_irreducible(A):
        raise AssumptionViolationError("phase chain at regeneration epochs is reducible")
    nu = perron_left(A)
    res = np.abs(nu @ A - nu).max()
    if res > FIXED_POINT_TOL:
        raise AssumptionViolationError(f"embedded phase vector fixed-point residual {res:.2e}")
    return _from_nu(model, up, down, nu)


def _check_level(dist: StationaryDistribution, x) -> float:
    x = float(x)
    if not (0.0 <= x <= dist.b):
        raise DomainError(f"x = {x} is outside [0, {dist.b}]")
    return x


def cdf_eval(dist: StationaryDistribution, x: float) -> np.ndarray:
    """Joint CDF P[level <= x, phase = j] over up-leg then down-leg phases."""
    x = _check_level(dist, x)
    a = dist.nu_u @ sojourn_up(dist.up.kit, x)
    d = dist.nu_d @ sojourn_down(dist.down.kit, x)
    return np.concatenate([a, d]) / dist.normalizer


def total_cdf(dist: StationaryDistribution, x: float) -> float:
    return float(cdf_eval(dist, x).sum())


def quantile(dist: StationaryDistribution, p: float, rel_tol: float = 1e-8) -> float:
    """Smallest level x with total CDF >= p (bisection)."""
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"probability {p} is outside [0, 1]")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return dist.b
    lo, hi = 0.0, dist.b
    while hi - lo > rel_tol * dist.b:
        mid = 0.5 * (lo + hi)
        if total_cdf(dist, mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def up_leg_fraction(dist: StationaryDistribution) -> float:
    """Long-run fraction of time spent in up-legs."""
    return float(dist.nu_u @ sojourn_up(dist.up.kit, dist.b).sum(axis=1)) / dist.normalizer
