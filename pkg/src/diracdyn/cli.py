"""``diracdyn`` command line: simulate, verify, bench, table."""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from typing import List, Optional

import numpy as np

from . import config as cfg
from .dynamics import diagnostics, integrate, run_many, write_csv
from .models import closed_form_tables, generic_tables
from .rng import stream
from .tridiag import block_diagonalize, one_pair_factors
from .verify import loglog_slope, random_spd_tridiag, run_suite, time_call

DENSE_MAX_K = 2000


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_simulate(args) -> int:
    try:
        run = cfg.load(args.config, kinds=_csv_list(args.kinds) if args.kinds else None,
                       dt=args.dt, t_end=args.t_end, seed=args.seed)
    except cfg.ConfigError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError) as exc:
        print(f"cannot build initial state: {exc}", file=sys.stderr)
        return 1

    spec = run.spec
    jobs = {k.value: (lambda k=k: integrate(spec, k, run.x0, run.integrator, args.project))
            for k in run.kinds}
    trajs = run_many(jobs)

    # write into a scratch directory first so a failure leaves nothing half-written
    os.makedirs(args.out, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=args.out)
    integ = {f: getattr(run.integrator, f) for f in ("method", "dt", "t_end", "tolerance", "stride")}
    summary = {"seed": run.seed, "N": spec.N, "d": spec.d, "pinned": spec.pinned,
               "integrator": integ, "kinds": {}}
    failed = []
    try:
        for kind, tr in trajs.items():
            name = f"{kind}_seed{run.seed}.csv"
            write_csv(os.path.join(tmp, name), tr, spec.n)
            summary["kinds"][kind] = dict(diagnostics(tr, spec), csv=name)
            if tr.truncated:
                failed.append(f"{kind}: {tr.error}")
        with open(os.path.join(tmp, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        for name in os.listdir(tmp):
            os.replace(os.path.join(tmp, name), os.path.join(args.out, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)

    for kind in sorted(summary["kinds"]):
        d = summary["kinds"][kind]
        print(f"{kind:<17s} energy drift {d['energy_drift_max']:.3e}  "
              f"residual {d['residual_final']:.3e}  steps {d['steps']}")
    if failed:
        for msg in failed:
            print(f"run failed: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_verify(args) -> int:
    results = run_suite(args.suite, args.seed, args.trials, timing=not args.no_timing)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} properties passed")
    return 0 if ok else 1


def bench_sizes(max_k: int) -> List[int]:
    Ks = []
    K = 1000
    while K <= max_k:
        Ks.append(K)
        K *= 10
    if not Ks or Ks[-1] != max_k:
        Ks.append(max_k)
    return sorted(set(k for k in Ks if k >= 2))


def cmd_bench(args) -> int:
    rng = stream(args.seed, 9)
    Ks = bench_sizes(args.max_k)
    out = open(args.out, "w") if args.out else sys.stdout
    rows = []
    try:
        print("K,onepair_ns,blockdiag_ns,dense_ns", file=out)
        for K in Ks:
            S = random_spd_tridiag(rng, K)
            one_pair_factors(S)
            block_diagonalize(S)
            t1 = time_call(lambda: one_pair_factors(S), args.reps)
            t2 = time_call(lambda: block_diagonalize(S), args.reps)
            if K <= DENSE_MAX_K:
                D = S.to_dense()
                dense = f"{time_call(lambda: np.linalg.inv(D), args.reps) * 1e9:.0f}"
            else:
                dense = "skipped"
            rows.append((K, t1, t2))
            print(f"{K},{t1 * 1e9:.0f},{t2 * 1e9:.0f},{dense}", file=out)
    finally:
        if args.out:
            out.close()
    if len(rows) >= 3:
        Ks_, t1s, t2s = zip(*rows)
        s1, s2 = loglog_slope(Ks_, t1s), loglog_slope(Ks_, t2s)
        ok = abs(s1 - 1.0) <= 0.2
        print(f"onepair slope {s1:.3f}, blockdiag slope {s2:.3f}: "
              f"{'linear' if ok else 'NOT linear'}", file=sys.stderr)
        return 0 if ok else 1
    return 0


def _table_rows(label, closed, generic):
    rows = []
    for i, (c, g) in enumerate(zip(closed, generic)):
        rows.append((f"{label}{i + 1}", c + 0.0, g + 0.0, abs(c - g)))
    return rows


def cmd_table(args) -> int:
    try:
        run = cfg.load(args.config, seed=args.seed)
    except cfg.ConfigError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    spec = run.spec
    x = run.x0
    if args.point == "random":
        from .models import random_state
        x = random_state(spec, stream(run.seed, 11))
    cf = closed_form_tables(spec, x)
    S, A, SD = generic_tables(spec, x)
    K = spec.K
    rows = _table_rows("c", cf.S.c, np.diag(S))
    rows += _table_rows("b", cf.S.b, np.diag(S, 1))
    rows += _table_rows("a", cf.A_offdiag, np.diag(A, 1))
    rows += _table_rows("cD", cf.SD.c, np.diag(SD))
    rows += _table_rows("bD", cf.SD.b, np.diag(SD, 1))
    print(f"{'entry':<8s} {'closed_form':>24s} {'generic':>24s} {'discrepancy':>12s}")
    for name, c, g, e in rows:
        print(f"{name:<8s} {c:24.17g} {g:24.17g} {e:12.3e}")
    far = np.abs(np.subtract.outer(np.arange(K), np.arange(K))) > 1
    outside = max(np.max(np.abs(S[far]), initial=0.0), np.max(np.abs(A[far]), initial=0.0),
                  np.max(np.abs(SD[far]), initial=0.0))
    worst = max([e for *_, e in rows] + [outside])
    print(f"max discrepancy {worst:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diracdyn",
                                description="Dirac-bracket constrained dynamics for chains and pendula")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate a configured system")
    s.add_argument("config")
    s.add_argument("--kinds", help="comma-separated subset of dirac_full,dirac_simplified,lmm")
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="out")
    s.add_argument("--project", action="store_true",
                   help="project recorded samples onto the constraint surface (off by default)")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run randomized property suites")
    v.add_argument("suite", nargs="?", default="all",
                   choices=["all", "brackets", "tridiag", "dynamics"])
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--no-timing", action="store_true", help="skip the O(K) timing checks")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="time tridiagonal inversion")
    b.add_argument("--max-k", type=int, default=100_000)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV file (default stdout)")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("table", help="closed-form vs bracket-assembled S, A, S^D")
    t.add_argument("config")
    t.add_argument("--point", choices=["initial", "random"], default="initial")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_table)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "reps", 1) < 1 or getattr(args, "trials", 1) < 1:
        print("--reps and --trials must be positive", file=sys.stderr)
        return 2
    if getattr(args, "max_k", 2) < 2:
        print("--max-k must be at least 2", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
