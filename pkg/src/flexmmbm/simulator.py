"""Regenerative Monte Carlo simulation of the two-leg model.

Phase changes happen at exact exponential epochs; between them the level
moves by Gaussian increments over steps of length at most ``dt``. Two
Brownian-bridge corrections remove the usual discretization bias at the
boundaries:

* reflection: the minimum of the bridge over a step is sampled whenever it can
  fall below the reflecting boundary, and the endpoint is pushed up by the
  amount of overshoot (the one-step Skorokhod map);
* absorption: a step that stays below the target boundary still counts as a
  hit with the bridge crossing probability ``exp(-2 (b - z0)(b - z1) / (s^2 h))``.

The down-leg runs in mirrored coordinates ``y = b - level`` with the drift
negated, so one stepping routine serves both legs.

Occupation time is accumulated per (leg, phase, grid cell) at the level of
the step midpoint, so no time piles up on the starting
boundary. The stationary CDF is a ratio of cycle totals; standard errors come
from batch means of the per-batch ratios.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .errors import InvalidInputError
from .flexible import FlexibleModel
from .model import MmbmParams

BLOCK = 1 << 20
# bridge corrections are skipped when their probability is below exp(-36)
BRIDGE_CUTOFF = 18.0
NEED_NORMALS, NEED_UNIFORMS, DONE = 1, 2, 0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    n_cycles: int = 10_000
    replications: int = 1
    seed: int = 0
    warmup_cycles: int = 100
    batches: int = 20

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if int(self.n_cycles) < 1:
            raise InvalidInputError("n_cycles must be at least 1")
        if int(self.replications) < 1:
            raise InvalidInputError("replications must be at least 1")
        if int(self.warmup_cycles) < 0:
            raise InvalidInputError("warmup_cycles must be nonnegative")
        if int(self.batches) < 2:
            raise InvalidInputError("batches must be at least 2")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidInputError("seed must be an unsigned 64-bit integer")


def dt_warning(b: float, legs, dt: float) -> str | None:
    """Message when ``dt`` exceeds 1e-2 of the drift and diffusion time scales."""
    mu = max(float(np.abs(p.mu).max()) for p in legs)
    s2 = max(float(p.sigma2.max()) for p in legs)
    scales = [b * b / s2]
    if mu > 0:
        scales.append(b / mu)
    bound = 1e-2 * min(scales)
    if dt > bound:
        return f"dt = {dt:g} exceeds the recommended bound {bound:.3g}"
    return None


@numba.njit(cache=True)
def _pick(cum, u):
    k = 0
    n = cum.shape[0]
    while k < n - 1 and cum[k] <= u:
        k += 1
    return k


@numba.njit(cache=True)
def _holding(rate, u):
    if rate <= 0.0:
        return np.inf
    return -math.log(1.0 - u) / rate


@numba.njit(cache=True, nogil=True)
def _kernel(
    mode, fs, ist, mu, sig, rate, cumq, cumsw, nph, b, dt, grid,
    normals, uniforms, target, warmup, nbatch, tmp, hist, leg_time, log_start, log_end, log_dur, lvl,
):
    # fs: level, time to next jump, leg elapsed; ist: leg, phase, cycle, normal pos, uniform pos
    y, trem, lt = fs[0], fs[1], fs[2]
    leg, ph, c, ip, iu = ist[0], ist[1], ist[2], ist[3], ist[4]
    nn = normals.shape[0]
    nu = uniforms.shape[0]
    sqdt = math.sqrt(dt)
    nbins = tmp.shape[2]
    ng = grid.shape[0]
    g0 = grid[0]
    # direct cell index on uniform grids, binary search otherwise
    dx = 0.0
    if ng > 1:
        dx = (grid[ng - 1] - g0) / (ng - 1)
        for i in range(1, ng):
            if abs(grid[i] - g0 - i * dx) > 1e-12 * (1.0 + abs(grid[ng - 1])):
                dx = 0.0
                break
    code = DONE
    while True:
        if ip >= nn:
            code = NEED_NORMALS
            break
        if iu > nu - 4:
            code = NEED_UNIFORMS
            break
        s = sig[leg, ph]
        if trem <= dt:
            h = trem
            jump = True
            sdh = s * math.sqrt(h)
        else:
            h = dt
            jump = False
            sdh = s * sqdt
        v = s * s * h
        z0 = y
        z1 = z0 + mu[leg, ph] * h + sdh * normals[ip]
        ip += 1
        if z0 * z1 < BRIDGE_CUTOFF * v:
            u = uniforms[iu]
            iu += 1
            d = z1 - z0
            mn = 0.5 * (z0 + z1 - math.sqrt(d * d - 2.0 * v * math.log(1.0 - u)))
            if mn < 0.0:
                z1 -= mn
        hit = z1 >= b
        zm = 0.5 * (z0 + (b if hit else z1))
        level = zm if leg == 0 else b - zm
        if dx > 0.0:
            k = int(math.ceil((level - g0) / dx))
            if k < 0:
                k = 0
            elif k > ng:
                k = ng
        else:
            k = np.searchsorted(grid, level)
        tmp[leg, ph, k] += h
        lt += h
        if not hit:
            g = (b - z0) * (b - z1)
            if g < BRIDGE_CUTOFF * v:
                u = uniforms[iu]
                iu += 1
                if u < math.exp(-2.0 * g / v):
                    hit = True
        if not hit:
            y = z1
            if z1 < lvl[0]:
                lvl[0] = z1
            if z1 > lvl[1]:
                lvl[1] = z1
            if jump:
                ph = _pick(cumq[leg, ph, : nph[leg]], uniforms[iu])
                trem = _holding(rate[leg, ph], uniforms[iu + 1])
                iu += 2
            else:
                trem -= h
            continue

        # boundary hit ends the current leg
        lvl[1] = max(lvl[1], b)
        if mode == 0:
            log_end[c, leg] = ph
            log_dur[c, leg] = lt
            if leg == 0:
                ph = _pick(cumsw[0, ph, : nph[1]], uniforms[iu])
                leg = 1
                log_start[c, 1] = ph
            else:
                if c >= warmup:
                    bt = (c - warmup) * nbatch // (target - warmup)
                    hist[bt] += tmp
                    leg_time[bt, 0] += log_dur[c, 0]
                    leg_time[bt, 1] += log_dur[c, 1]
                tmp[:] = 0.0
                ph = _pick(cumsw[1, ph, : nph[0]], uniforms[iu])
                leg = 0
                c += 1
                if c < target:
                    log_start[c, 0] = ph
        else:
            log_end[c, 0] = ph
            log_dur[c, 0] = lt
            st = log_start[c, 0]
            for j in range(nph[leg]):
                run = 0.0
                for kk in range(nbins):
                    run += tmp[leg, j, kk]
                    hist[0, st, j, kk] += run
                    hist[1, st, j, kk] += run * run
            tmp[:] = 0.0
            c += 1
            ph = c % nph[leg]
            if c < target:
                log_start[c, 0] = ph
        y = 0.0
        lt = 0.0
        trem = _holding(rate[leg, ph], uniforms[iu + 1])
        iu += 2
        if c >= target:
            code = DONE
            break
    fs[0], fs[1], fs[2] = y, trem, lt
    ist[0], ist[1], ist[2], ist[3], ist[4] = leg, ph, c, ip, iu
    return code


def _leg_arrays(legs):
    mmax = max(p.m for p in legs)
    n = len(legs)
    mu = np.zeros((n, mmax))
    sig = np.ones((n, mmax))
    rate = np.zeros((n, mmax))
    cumq = np.ones((n, mmax, mmax))
    for l, p in enumerate(legs):
        # mirrored coordinates for the down-leg
        mu[l, : p.m] = p.mu if l == 0 else -p.mu
        sig[l, : p.m] = p.sigma
        q = -np.diag(p.Q)
        rate[l, : p.m] = q
        for i in range(p.m):
            if q[i] > 0:
                row = np.array(p.Q[i], dtype=float)
                row[i] = 0.0
                cumq[l, i, : p.m] = np.cumsum(row / q[i])
                cumq[l, i, p.m - 1] = 1.0
    nph = np.array([p.m for p in legs], dtype=np.int64)
    return mu, sig, rate, cumq, nph, mmax


def _switch_arrays(P_ud, P_du, mmax):
    cumsw = np.ones((2, mmax, mmax))
    for l, P in enumerate((P_ud, P_du)):
        c = np.cumsum(P, axis=1)
        c[:, -1] = 1.0
        cumsw[l, : P.shape[0], : P.shape[1]] = c
    return cumsw


def _drive(mode, legs, cumsw, b, grid, config: SimConfig, rep: int, target, warmup, nbatch, start_leg=0):
    mu, sig, rate, cumq, nph, mmax = _leg_arrays(legs)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), int(rep)]))
    nbins = grid.shape[0] + 1
    tmp = np.zeros((2, mmax, nbins))
    if mode == 0:
        hist = np.zeros((nbatch, 2, mmax, nbins))
        log_start = np.zeros((target, 2), dtype=np.int64)
        log_end = np.zeros((target, 2), dtype=np.int64)
        log_dur = np.zeros((target, 2))
    else:
        hist = np.zeros((2, mmax, mmax, nbins))
        log_start = np.zeros((target, 1), dtype=np.int64)
        log_end = np.zeros((target, 1), dtype=np.int64)
        log_dur = np.zeros((target, 1))
    leg_time = np.zeros((nbatch, 2))
    lvl = np.array([np.inf, -np.inf])
    normals = rng.standard_normal(BLOCK)
    uniforms = rng.random(BLOCK // 4)
    fs = np.array([0.0, 0.0, 0.0])
    ist = np.array([start_leg, 0, 0, 0, 0], dtype=np.int64)
    fs[1] = -math.log(1.0 - uniforms[0]) / rate[start_leg, 0] if rate[start_leg, 0] > 0 else np.inf
    ist[4] = 1
    log_start[0, 0] = 0
    while True:
        code = _kernel(
            mode, fs, ist, mu, sig, rate, cumq, cumsw, nph, float(b), float(config.dt), grid,
            normals, uniforms, target, warmup, nbatch, tmp, hist, leg_time, log_start, log_end, log_dur, lvl,
        )
        if code == DONE:
            break
        if code == NEED_NORMALS:
            normals = rng.standard_normal(BLOCK)
            ist[3] = 0
        else:
            uniforms = rng.random(BLOCK // 4)
            ist[4] = 0
    return dict(hist=hist, leg_time=leg_time, log_start=log_start, log_end=log_end, log_dur=log_dur, lvl=lvl)


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _transition_estimate(starts, ends, m_from, m_to):
    counts = np.zeros((m_from, m_to))
    np.add.at(counts, (starts, ends), 1.0)
    n = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        H = counts / n
        # Agresti-Coull interval half-width / 2 as the standard error
        pt = (counts + 2.0) / (n + 4.0)
        se = np.sqrt(pt * (1.0 - pt) / (n + 4.0))
    return H, se, counts


def _group_means(keys, values, m):
    mean = np.full(m, np.nan)
    se = np.full(m, np.nan)
    n = np.zeros(m, dtype=np.int64)
    for i in range(m):
        v = values[keys == i]
        n[i] = v.size
        if v.size:
            mean[i] = v.mean()
        if v.size > 1:
            se[i] = v.std(ddof=1) / np.sqrt(v.size)
    return mean, se, n


def _default_grid(b, n=41):
    return np.linspace(0.0, b, n)


@dataclass
class SimReport:
    grid: np.ndarray
    cdf: np.ndarray
    cdf_se: np.ndarray
    total_cdf: np.ndarray
    total_cdf_se: np.ndarray
    up_fraction: float
    up_fraction_se: float
    H0_hat: np.ndarray
    H0_se: np.ndarray
    Hb_hat: np.ndarray
    Hb_se: np.ndarray
    up_times: np.ndarray
    up_times_se: np.ndarray
    down_times: np.ndarray
    down_times_se: np.ndarray
    cycles: int
    level_min: float
    level_max: float
    dt: float
    seed: int
    replications: int
    batches: int
    warnings: list = field(default_factory=list)
    method: str = (
        "exact phase jumps; Gaussian level increments with Brownian-bridge reflection at the "
        "regulating boundary and bridge crossing probability at the target boundary"
    )

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def simulate(model: FlexibleModel, config: SimConfig, grid=None, workers: int | None = None) -> SimReport:
    """Simulate ``config.n_cycles`` full cycles (up-leg plus down-leg) per replication."""
    b = model.b
    grid = _default_grid(b) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > b:
        raise InvalidInputError("grid must be strictly increasing within [0, b]")
    legs = (model.up, model.down)
    msgs = []
    w = dt_warning(b, legs, config.dt)
    if w:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
        msgs.append(w)
    mmax = max(p.m for p in legs)
    cumsw = _switch_arrays(np.asarray(model.P_ud), np.asarray(model.P_du), mmax)
    nbatch = max(2, -(-int(config.batches) // int(config.replications)))
    warmup = int(config.warmup_cycles)
    target = warmup + int(config.n_cycles)
    if int(config.n_cycles) < nbatch:
        raise InvalidInputError(f"n_cycles must be at least the number of batches ({nbatch})")

    runs = _map(
        lambda rep: _drive(0, legs, cumsw, b, grid, config, rep, target, warmup, nbatch),
        range(int(config.replications)),
        workers,
    )
    mu_, md = model.up.m, model.down.m
    hist = np.concatenate([r["hist"] for r in runs])
    leg_time = np.concatenate([r["leg_time"] for r in runs])
    cum = np.cumsum(hist, axis=3)[..., : grid.size]
    per_phase = np.concatenate([cum[:, 0, :mu_, :], cum[:, 1, :md, :]], axis=1)
    T = leg_time.sum(axis=1)
    ratios = per_phase / T[:, None, None]
    est = per_phase.sum(axis=0) / T.sum()
    nb = T.size
    se = ratios.std(axis=0, ddof=1) / np.sqrt(nb)
    tot_ratios = ratios.sum(axis=1)
    total = est.sum(axis=0)
    total_se = tot_ratios.std(axis=0, ddof=1) / np.sqrt(nb)
    fr = leg_time[:, 0] / T
    up_fraction = float(leg_time[:, 0].sum() / T.sum())
    up_fraction_se = float(fr.std(ddof=1) / np.sqrt(nb))

    def post(key):
        return np.concatenate([r[key][warmup:] for r in runs])

    starts, ends, durs = post("log_start"), post("log_end"), post("log_dur")
    H0, H0_se, _ = _transition_estimate(starts[:, 0], ends[:, 0], mu_, mu_)
    Hb, Hb_se, _ = _transition_estimate(starts[:, 1], ends[:, 1], md, md)
    ut, ut_se, _ = _group_means(starts[:, 0], durs[:, 0], mu_)
    dtm, dt_se, _ = _group_means(starts[:, 1], durs[:, 1], md)
    lvl = np.array([r["lvl"] for r in runs])
    return SimReport(
        grid=grid,
        cdf=est.T,
        cdf_se=se.T,
        total_cdf=total,
        total_cdf_se=total_se,
        up_fraction=up_fraction,
        up_fraction_se=up_fraction_se,
        H0_hat=H0,
        H0_se=H0_se,
        Hb_hat=Hb,
        Hb_se=Hb_se,
        up_times=ut,
        up_times_se=ut_se,
        down_times=dtm,
        down_times_se=dt_se,
        cycles=int(config.n_cycles) * int(config.replications),
        level_min=float(lvl[:, 0].min()),
        level_max=float(lvl[:, 1].max()),
        dt=float(config.dt),
        seed=int(config.seed),
        replications=int(config.replications),
        batches=nb,
        warnings=msgs,
    )


@dataclass
class ExcursionEstimate:
    direction: str
    grid: np.ndarray
    mean_time: np.ndarray
    mean_time_se: np.ndarray
    H_hat: np.ndarray
    H_se: np.ndarray
    counts: np.ndarray
    sojourn: np.ndarray
    sojourn_se: np.ndarray
    level_min: float
    level_max: float


def estimate_excursions(
    params: MmbmParams, b: float, direction: str, config: SimConfig, grid=None, workers: int | None = None
) -> ExcursionEstimate:
    """Independent boundary-to-boundary excursions, starting phases taken round robin.

    ``sojourn[i, j, k]`` estimates the mean time spent at levels ``<= grid[k]``
    in phase ``j`` during an excursion started in phase ``i``.
    """
    if direction not in ("up", "down"):
        raise InvalidInputError(f"direction must be 'up' or 'down', got {direction!r}")
    b = float(b)
    grid = _default_grid(b) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > b:
        raise InvalidInputError("grid must be strictly increasing within [0, b]")
    leg = 0 if direction == "up" else 1
    legs = (params, params)
    w = dt_warning(b, legs, config.dt)
    if w:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    m = params.m
    cumsw = _switch_arrays(np.eye(m), np.eye(m), m)
    target = int(config.n_cycles)
    runs = _map(
        lambda rep: _drive(1, legs, cumsw, b, grid, config, rep, target, 0, 1, start_leg=leg),
        range(int(config.replications)),
        workers,
    )
    starts = np.concatenate([r["log_start"][:, 0] for r in runs])
    ends = np.concatenate([r["log_end"][:, 0] for r in runs])
    durs = np.concatenate([r["log_dur"][:, 0] for r in runs])
    H, H_se, counts = _transition_estimate(starts, ends, m, m)
    mean, se, n = _group_means(starts, durs, m)
    S = sum(r["hist"] for r in runs)[:, :m, :m, : grid.size]
    nn = n[:, None, None].astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        soj = S[0] / nn
        var = (S[1] / nn - soj**2) * nn / (nn - 1.0)
        soj_se = np.sqrt(np.maximum(var, 0.0) / nn)
    lvl = np.array([r["lvl"] for r in runs])
    return ExcursionEstimate(
        direction, grid, mean, se, H, H_se, counts, soj, soj_se, float(lvl[:, 0].min()), float(lvl[:, 1].max())
    )
