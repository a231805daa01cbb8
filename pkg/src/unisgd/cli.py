"""Command-line entry point.

Exit codes: 0 success, 1 failed verification or divergence, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import estimators as est
from . import federated as fed
from . import harness, theory
from .compression import parse_compressor, verify_compressor
from .problems import InvalidInput
from .rng import stream


def _config_args(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")


def _parser():
    ap = argparse.ArgumentParser(prog="unisgd", description="Unified stochastic gradient simulator.")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("run", help="run one configuration and write its trace")
    _config_args(p)

    p = sub.add_parser("bound", help="print certificate, stepsizes and iteration bounds")
    _config_args(p)

    p = sub.add_parser("verify-estimator", help="Monte Carlo check of the estimator certificate")
    _config_args(p)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--eta", type=float)

    p = sub.add_parser("verify-compressor", help="Monte Carlo check of a compressor")
    p.add_argument("spec", help='"identity", "randk:<k>" or "dither:<s>"')
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--vectors", type=int, default=20)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify-bound", help="run and compare the stopping index with the bound")
    _config_args(p)

    p = sub.add_parser("prop1", help="check the two-phase recursion bound")
    p.add_argument("--a", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--M0", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--random", type=int, default=0, help="check this many random tuples instead")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="cartesian grid of runs, one CSV per cell plus summary.csv")
    _config_args(p)
    p.add_argument("--grid", action="append", default=[], metavar="key=v1|v2",
                   help="grid axis; repeat to add values or axes; randk:1..8 expands")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    return ap


def _cmd_run(a):
    cfg = harness.load_config(a.config, a.overrides)
    try:
        tr = harness.run(cfg)
    except harness.DivergenceError as exc:
        print(f"diverged: {exc}")
        return 1
    last = tr[-1]
    status = f"reached epsilon at k={tr.stop_k}" if tr.stopped else f"stopped after {tr.iterations} iterations"
    print(f"{status}; f_gap={last.f_gap:.6e} grad_norm={last.grad_norm:.6e} eta={tr.eta:.6g}")
    if tr.bound is not None:
        print(tr.bound.label())
    if cfg.output:
        print(f"trace written to {cfg.output}")
    else:
        sys.stdout.write(harness.csv_text(tr))
    return 0


def _cmd_bound(a):
    cfg = harness.load_config(a.config, a.overrides)
    rows = harness.bound_table(cfg)
    w = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{w}}  {v}")
    return 0


def _cmd_verify_estimator(a):
    cfg = harness.load_config(a.config, a.overrides)
    rep = harness.verify_estimator(cfg, a.points, a.samples, a.spread, a.eta)
    for i, c in enumerate(rep.checks):
        print(f"point {i:3d}: E|g|^2 {c.lhs1:.6g} <= {c.rhs1:.6g} [{'ok' if c.ok1 else 'FAIL'}]  "
              f"E sigma'^2 {c.lhs2:.6g} <= {c.rhs2:.6g} [{'ok' if c.ok2 else 'FAIL'}]")
    tag = " (empirical certificate)" if rep.empirical else ""
    print(f"{'PASS' if rep.passed else 'FAIL'}: worst relative slack {rep.worst_margin:.4g}{tag}")
    return 0 if rep.passed else 1


def _cmd_verify_compressor(a):
    op = parse_compressor(a.spec, a.d)
    rng = stream(a.seed, "verify")
    vecs = rng.standard_normal((a.vectors, a.d))
    rep = verify_compressor(op, vecs, a.samples, rng)
    print(f"omega={rep.omega:.6g} max variance ratio={rep.max_variance_ratio:.6g} "
          f"threshold={rep.threshold:.6g} max bias |z|={rep.max_bias_z:.3f}")
    ok = rep.ok and rep.max_bias_z <= 4.0
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_verify_bound(a):
    cfg = harness.load_config(a.config, a.overrides)
    try:
        rep = harness.verify_bound(cfg)
    except harness.DivergenceError as exc:
        print(f"diverged: {exc}")
        return 1
    print(rep.summary())
    return 0 if rep.passed else 1


def _cmd_prop1(a):
    if a.random:
        rng = stream(a.seed, "verify")
        bad = 0
        for _ in range(a.random):
            t = random_prop1_tuple(rng)
            r = theory.check_prop1(*t)
            bad += not r
        print(f"{a.random - bad}/{a.random} tuples satisfy the bound")
        return 0 if bad == 0 else 1
    if None in (a.a, a.c, a.b, a.M0, a.K):
        raise InvalidInput("give --a --c --b --M0 --K or --random N")
    r = theory.check_prop1(a.a, a.c, a.b, a.M0, a.K)
    print(f"M_K={r.M_K:.6g} bound={r.bound:.6g} margin={r.margin:.6g} {'PASS' if r else 'FAIL'}")
    return 0 if r else 1


def random_prop1_tuple(rng):
    """``(a, c, b, M0, K)`` with ``a b <= 1`` and K in [10, 1000]."""
    a = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
    b = float(rng.uniform(0.0, 1.0) / a)
    c = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
    M0 = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
    K = int(rng.integers(10, 1001))
    return a, c, b, M0, K


def _cmd_sweep(a):
    base = harness.load_config(a.config, a.overrides)
    grid = harness.parse_grid(a.grid)
    if not grid:
        raise InvalidInput("sweep needs at least one --grid axis")
    path = harness.sweep(base, grid, a.out, a.threads)
    print(f"summary written to {path}")
    return 0


COMMANDS = {
    "run": _cmd_run,
    "bound": _cmd_bound,
    "verify-estimator": _cmd_verify_estimator,
    "verify-compressor": _cmd_verify_compressor,
    "verify-bound": _cmd_verify_bound,
    "prop1": _cmd_prop1,
    "sweep": _cmd_sweep,
}


def cli(argv=None) -> int:
    ap = _parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[a.command](a)
    except (InvalidInput, ValueError, KeyError, est.CertificateUnavailable,
            fed.CompositionInfeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
