"""Evaluate the bundled reference table against the analytic pipeline."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import load_bundled, load_expected
from .flexible import FlexibleModel, StationaryDistribution, assemble, quantile, total_cdf, up_leg_fraction
from .model import MmbmParams
from .sojourn import excursion_times


def shift_drift(model: FlexibleModel, eps: float) -> FlexibleModel:
    """Same model with ``eps`` added to every drift of both legs."""
    legs = [MmbmParams(p.Q, p.mu + eps, p.sigma) for p in (model.up, model.down)]
    return FlexibleModel(model.b, legs[0], legs[1], model.P_ud, model.P_du)


def evaluate(dist: StationaryDistribution, entry: dict) -> float:
    q = entry["quantity"]
    if q == "excursion_up":
        return float(excursion_times(dist.up.kit)[0][entry["phase"] - 1])
    if q == "excursion_down":
        return float(excursion_times(dist.down.kit)[1][entry["phase"] - 1])
    if q == "up_fraction":
        return up_leg_fraction(dist)
    if q == "quantile":
        return quantile(dist, entry["p"])
    if q == "cdf":
        return total_cdf(dist, entry["x"])
    if q == "H0_up":
        return float(dist.H0_up[entry["row"] - 1, entry["col"] - 1])
    if q == "Hb_down":
        return float(dist.Hb_down[entry["row"] - 1, entry["col"] - 1])
    if q == "K_max_eig_up":
        return float(np.linalg.eigvals(dist.up.kit.K).real.max())
    raise KeyError(f"unknown quantity {q!r}")


@dataclass
class CheckRow:
    id: str
    config: str
    computed: float
    expected: float
    tol: float

    @property
    def error(self) -> float:
        return abs(self.computed - self.expected)

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.tol * (1 + 1e-12))


def run_reference(perturb_drift: float = 0.0, configs=None):
    """Return (rows, seconds per config)."""
    entries = load_expected()
    names = sorted({e["config"] for e in entries})
    if configs is not None:
        names = [n for n in names if n in configs]
    rows, timing = [], {}
    for name in names:
        t0 = time.perf_counter()
        model = load_bundled(name).model
        if perturb_drift:
            model = shift_drift(model, perturb_drift)
        dist = assemble(model)
        for e in entries:
            if e["config"] == name:
                rows.append(CheckRow(e["id"], name, evaluate(dist, e), e["value"], e["tol"]))
        timing[name] = time.perf_counter() - t0
    return rows, timing
