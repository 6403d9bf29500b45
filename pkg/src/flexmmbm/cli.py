"""Command-line front end.

Commands: ``solve``, ``simulate``, ``validate``, ``examples``.
Exit codes: 0 success, 2 configuration error, 3 analytic failure,
4 unsupported case, 5 regression mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, config_to_dict, load_config
from .errors import MmbmError, UnsupportedCaseError
from .flexible import assemble, cdf_eval, quantile, up_leg_fraction
from .fluid import convergence_check
from .model import Drift, classify_drift
from .reference import run_reference
from .simulator import SimConfig, simulate
from .sojourn import clamp_output, excursion_times

EXIT_OK, EXIT_CONFIG, EXIT_ANALYTIC, EXIT_UNSUPPORTED, EXIT_MISMATCH = 0, 2, 3, 4, 5


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _write_json(path: Path, payload: dict):
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")


def _phase_labels(model):
    return [f"up_{i + 1}" for i in range(model.up.m)] + [f"down_{i + 1}" for i in range(model.down.m)]


def _analytic_tables(cfg, grid):
    dist = assemble(cfg.model)
    rows = []
    for x in grid:
        v = clamp_output(cdf_eval(dist, min(float(x), cfg.model.b)))
        rows.append((float(x), v))
    up_times, _ = excursion_times(dist.up.kit)
    _, down_times = excursion_times(dist.down.kit)
    summary = {
        "name": cfg.name,
        "nu_u": dist.nu_u.tolist(),
        "nu_d": dist.nu_d.tolist(),
        "normalizer": dist.normalizer,
    }
    outputs = set(cfg.outputs)
    if "up_fraction" in outputs:
        summary["up_fraction"] = up_leg_fraction(dist)
    if "percentiles" in outputs:
        summary["percentiles"] = {f"{p:g}": quantile(dist, p) for p in cfg.percentiles}
    if "passage" in outputs:
        summary["H0_up"] = clamp_output(dist.H0_up).tolist()
        summary["Hb_down"] = clamp_output(dist.Hb_down).tolist()
    if "excursions" in outputs:
        summary["excursion_up"] = up_times.tolist()
        summary["excursion_down"] = down_times.tolist()
    summary["warnings"] = list(dist.up.passage.warnings) + list(dist.down.passage.warnings)
    return dist, rows, summary


def _write_cdf(path: Path, labels, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", *labels, "total"])
        for x, v in rows:
            w.writerow([repr(x), *(repr(float(a)) for a in v), repr(float(v.sum()))])


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_points(args.grid)
    dist, rows, summary = _analytic_tables(cfg, grid)
    if "cdf" in cfg.outputs:
        _write_cdf(out / "cdf.csv", _phase_labels(cfg.model), rows)
    _write_json(out / "summary.json", summary)
    _say(args, f"wrote {out / 'summary.json'}")
    if "up_fraction" in summary:
        _say(args, f"up-leg time fraction: {summary['up_fraction']:.4f}")
    for p, x in summary.get("percentiles", {}).items():
        _say(args, f"quantile {p}: {x:.4f}")
    return EXIT_OK


def _within(value, est, se):
    return bool(abs(value - est) <= 3.0 * se + 1e-12)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.sim or SimConfig()
    if args.seed is not None:
        sim = SimConfig(sim.dt, sim.n_cycles, sim.replications, args.seed, sim.warmup_cycles, sim.batches)
    grid = cfg.grid_points(args.grid)
    t0 = time.perf_counter()
    report = simulate(cfg.model, sim, grid=grid)
    payload = {"name": cfg.name, "config": config_to_dict(cfg), "report": report.to_dict()}
    payload["elapsed_seconds"] = time.perf_counter() - t0
    try:
        dist, rows, summary = _analytic_tables(cfg, grid)
    except UnsupportedCaseError:
        dist = None
    if dist is not None:
        cmp = []
        total = np.array([v.sum() for _, v in rows])
        for k, x in enumerate(grid):
            cmp.append({"quantity": f"total_cdf({x:g})", "analytic": float(total[k]),
                        "estimate": float(report.total_cdf[k]), "se": float(report.total_cdf_se[k])})
        cmp.append({"quantity": "up_fraction", "analytic": summary.get("up_fraction", up_leg_fraction(dist)),
                    "estimate": report.up_fraction, "se": report.up_fraction_se})
        up_t, _ = excursion_times(dist.up.kit)
        _, dn_t = excursion_times(dist.down.kit)
        for i in range(cfg.model.up.m):
            if np.isfinite(report.up_times_se[i]):
                cmp.append({"quantity": f"excursion_up[{i + 1}]", "analytic": float(up_t[i]),
                            "estimate": float(report.up_times[i]), "se": float(report.up_times_se[i])})
        for i in range(cfg.model.down.m):
            if np.isfinite(report.down_times_se[i]):
                cmp.append({"quantity": f"excursion_down[{i + 1}]", "analytic": float(dn_t[i]),
                            "estimate": float(report.down_times[i]), "se": float(report.down_times_se[i])})
        for c in cmp:
            c["within_3se"] = _within(c["analytic"], c["estimate"], c["se"])
        payload["comparison"] = cmp
        bad = [c["quantity"] for c in cmp if not c["within_3se"]]
        _say(args, f"{len(cmp) - len(bad)}/{len(cmp)} analytic values within 3 standard errors")
        for b in bad:
            _say(args, f"  outside: {b}")
    _write_json(out / "sim_report.json", payload)
    _say(args, f"wrote {out / 'sim_report.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    model = cfg.model
    for name, leg in (("up", model.up), ("down", model.down)):
        if classify_drift(leg).kind is Drift.ZERO:
            raise UnsupportedCaseError(
                f"{name}-leg has zero mean drift; the sojourn closed forms are not available in that case"
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lambdas = cfg.lambdas or (1e2, 1e3, 1e4)
    x = cfg.validate_x if cfg.validate_x is not None else model.b / 2
    up = convergence_check(model.up, model.b, x, lambdas)
    down = up if model.down == model.up else convergence_check(model.down, model.b, x, lambdas)
    eu, ed = up.error_up, down.error_down
    with (out / "convergence.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "error_up", "error_down", "order_up", "order_down"])
        for i, lam in enumerate(lambdas):
            w.writerow([repr(float(lam)), repr(eu[i]), repr(ed[i]), repr(up.order_up[i]), repr(down.order_down[i])])
    decreasing = all(b < a for a, b in zip(eu, eu[1:])) and all(b < a for a, b in zip(ed, ed[1:]))
    passed = decreasing and eu[-1] <= up.threshold and ed[-1] <= down.threshold
    _write_json(out / "validate.json", {
        "name": cfg.name, "x": x, "lambdas": list(lambdas), "error_up": eu, "error_down": ed,
        "threshold": up.threshold, "passed": passed, "note": up.note,
    })
    for i, lam in enumerate(lambdas):
        _say(args, f"lambda={lam:>10g}  error_up={eu[i]:.3e}  error_down={ed[i]:.3e}")
    _say(args, "PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_MISMATCH


def cmd_examples(args) -> int:
    t0 = time.perf_counter()
    rows, timing = run_reference(perturb_drift=args.perturb_drift)
    width = max(len(r.id) for r in rows)
    bad = [r for r in rows if not r.ok]
    for r in rows:
        if not args.quiet or not r.ok:
            flag = "pass" if r.ok else "FAIL"
            print(f"{flag}  {r.id:<{width}}  computed={r.computed:.6g}  expected={r.expected:g}  tol={r.tol:g}")
    elapsed = time.perf_counter() - t0
    print(f"{len(rows) - len(bad)}/{len(rows)} reference values matched in {elapsed:.2f} s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "examples.json", {
            "perturb_drift": args.perturb_drift,
            "elapsed_seconds": elapsed,
            "seconds_per_config": timing,
            "rows": [{"id": r.id, "computed": r.computed, "expected": r.expected, "tol": r.tol, "ok": r.ok} for r in rows],
        })
    if bad:
        print("mismatches: " + ", ".join(r.id for r in bad), file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexmmbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--out", default="." if config else None, help="output directory")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("solve", help="stationary distribution and boundary quantities")
    common(p)
    p.add_argument("--grid", type=int, help="number of uniform levels in [0, b]")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo estimates with standard errors")
    common(p)
    p.add_argument("--grid", type=int, help="number of uniform levels in [0, b]")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="fluid-limit convergence check")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("examples", help="check the bundled reference values")
    common(p, config=False)
    p.add_argument("--perturb-drift", type=float, default=0.0, help="add this to every drift (sensitivity check)")
    p.set_defaults(func=cmd_examples)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedCaseError as exc:
        print(f"unsupported case: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except MmbmError as exc:
        chain = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        cause = exc.__cause__ or exc.__context__
        while cause is not None:
            chain += "\n  caused by: " + "".join(traceback.format_exception_only(type(cause), cause)).strip()
            cause = cause.__cause__ or cause.__context__
        print(f"analytic failure: {chain}", file=sys.stderr)
        return EXIT_ANALYTIC


if __name__ == "__main__":
    sys.exit(main())
