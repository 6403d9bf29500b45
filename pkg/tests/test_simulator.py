import json
import warnings

import numpy as np
import pytest

from flexmmbm import FlexibleModel, InvalidInputError, MmbmParams, assemble, solve_pair, solve_passage
from flexmmbm.config import load_bundled
from flexmmbm.flexible import total_cdf, up_leg_fraction
from flexmmbm.simulator import SimConfig, dt_warning, estimate_excursions, simulate
from flexmmbm.sojourn import excursion_times
from test_sojourn import green_up

FAST = SimConfig(dt=1e-3, n_cycles=400, seed=7, warmup_cycles=10, batches=10)
TWO_PHASE = MmbmParams([[-0.5, 0.5], [1.0, -1.0]], [-0.6, 0.4], [0.9, 1.4])


def within(analytic, est, se, k=3.0):
    return np.all(np.abs(np.asarray(analytic) - np.asarray(est)) <= k * np.asarray(se) + 1e-12)


def test_bitwise_reproducible():
    model = load_bundled("example1_case2").model
    a = simulate(model, FAST).to_dict()
    b = simulate(model, FAST).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    c = simulate(model, SimConfig(dt=1e-3, n_cycles=400, seed=8, warmup_cycles=10, batches=10)).to_dict()
    assert c["up_fraction"] != a["up_fraction"]


def test_workers_do_not_change_results():
    model = load_bundled("example1_case1").model
    cfg = SimConfig(dt=1e-3, n_cycles=200, replications=3, seed=3, warmup_cycles=5, batches=6)
    a = simulate(model, cfg, workers=1).to_dict()
    b = simulate(model, cfg, workers=3).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_level_stays_in_strip():
    model = FlexibleModel.symmetric(1.0, TWO_PHASE)
    rep = simulate(model, FAST)
    assert 0.0 <= rep.level_min and rep.level_max <= 1.0
    assert rep.total_cdf[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(rep.total_cdf) >= 0)
    assert rep.cdf.shape == (rep.grid.size, 4)


def test_scalar_example_within_three_se():
    model = load_bundled("example1_case1").model
    dist = assemble(model)
    grid = np.linspace(0, 4, 9)
    rep = simulate(model, SimConfig(dt=1e-3, n_cycles=4000, seed=11, warmup_cycles=50, batches=20), grid=grid)
    analytic = [total_cdf(dist, x) for x in grid]
    assert within(analytic, rep.total_cdf, rep.total_cdf_se)
    assert within(up_leg_fraction(dist), rep.up_fraction, rep.up_fraction_se)
    t_up, _ = excursion_times(dist.up.kit)
    _, t_dn = excursion_times(dist.down.kit)
    assert within(t_up, rep.up_times, rep.up_times_se)
    assert within(t_dn, rep.down_times, rep.down_times_se)


def test_two_phase_transition_matrices():
    model = FlexibleModel.symmetric(1.0, TWO_PHASE)
    sol = solve_passage(TWO_PHASE, solve_pair(TWO_PHASE), 1.0)
    rep = simulate(model, SimConfig(dt=1e-3, n_cycles=3000, seed=5, warmup_cycles=20, batches=20))
    assert within(sol.H0, rep.H0_hat, rep.H0_se)
    assert within(sol.Hb, rep.Hb_hat, rep.Hb_se)


def test_excursions_match_green_function():
    p = MmbmParams.from_variance([[0.0]], [-1.0], [10.0])
    grid = np.array([1.0, 2.0, 3.0, 4.0])
    est = estimate_excursions(p, 4.0, "up", SimConfig(dt=1e-3, n_cycles=3000, seed=2), grid=grid)
    ref = [green_up(-1.0, 10.0, 4.0, x) for x in grid]
    assert within(ref, est.sojourn[0, 0], est.sojourn_se[0, 0])
    assert within(2.1277, est.mean_time[0], est.mean_time_se[0])
    assert est.H_hat[0, 0] == 1.0
    assert est.level_min >= 0.0 and est.level_max <= 4.0


def test_halving_dt_stays_within_band():
    model = load_bundled("example1_case3").model
    grid = np.linspace(0, 4, 5)
    a = simulate(model, SimConfig(dt=2e-3, n_cycles=3000, seed=21, warmup_cycles=20), grid=grid)
    b = simulate(model, SimConfig(dt=1e-3, n_cycles=3000, seed=22, warmup_cycles=20), grid=grid)
    band = 3 * np.hypot(a.total_cdf_se, b.total_cdf_se) + 1e-12
    assert np.all(np.abs(a.total_cdf - b.total_cdf) <= band)
    assert abs(a.up_fraction - b.up_fraction) <= 3 * np.hypot(a.up_fraction_se, b.up_fraction_se)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SimConfig(n_cycles=0)
    with pytest.raises(InvalidInputError):
        SimConfig(dt=-1.0)
    with pytest.raises(InvalidInputError):
        SimConfig(batches=1)
    model = load_bundled("example1_case1").model
    with pytest.raises(InvalidInputError):
        simulate(model, FAST, grid=[0.0, 5.0])
    with pytest.raises(InvalidInputError):
        estimate_excursions(TWO_PHASE, 1.0, "sideways", FAST)


def test_dt_warning():
    legs = [MmbmParams.from_variance([[0.0]], [-1.0], [10.0])]
    assert dt_warning(4.0, legs, 1e-4) is None
    assert "exceeds" in dt_warning(4.0, legs, 0.1)
    model = FlexibleModel.symmetric(4.0, legs[0])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        rep = simulate(model, SimConfig(dt=0.05, n_cycles=40, batches=4, warmup_cycles=0))
    assert any("exceeds" in str(w.message) for w in rec)
    assert rep.warnings
