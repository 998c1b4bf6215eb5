"""Command-line entry point: ``redshard {run,sweep,reproduce,bounds,verify}``.

Exit codes: 0 ok, 1 configuration error, 2 a verdict or check failed,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import experiments as ex
from .analysis import bound_table, harmonic_log_estimate
from .config import load_config
from .distributions import Exponential, ExponentialMixture, ShiftedExponential, parse_dist
from .exceptions import ConfigError, InvalidSpec, RedshardError
from .workload import BURSTY_ARRIVALS, Request, WorkloadSpec, pad_codes

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATED, EXIT_INTERNAL = 0, 1, 2, 3

LEMMAS = ("invariance", "dominance-np", "dominance-redundancy", "dominance-nlu", "order-nlu", "order-nsu")


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "reps", None) is not None:
        if args.reps < 2:
            raise ConfigError("reps", "must be >= 2")
        cfg.reps = args.reps
    if getattr(args, "N", None) is not None:
        cfg.workload = cfg.workload.with_N(args.N)
    if getattr(args, "output", None):
        cfg.output = args.output
    return cfg


def _emit(result, output):
    if output:
        ex.write_csv(result, output)
        print(f"wrote {len(result.rows())} rows to {output}", file=sys.stderr)
    else:
        print(ex.format_rows(result))


def cmd_run(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if args.rho is not None:
        if not 0 < args.rho < 1:
            raise ConfigError("rho", "must lie in (0, 1)")
        cfg.rho_grid = (args.rho,)
    else:
        cfg.rho_grid = cfg.rho_grid[:1]
    if args.policy:
        matches = [p for p in cfg.policies if p.name == args.policy or p.id == args.policy]
        if not matches:
            raise ConfigError("policy", f"{args.policy!r} is not in the config's policy list")
        cfg.policies = tuple(matches[:1])
    else:
        cfg.policies = cfg.policies[:1]
    cfg.bounds = ()
    _emit(ex.run_experiment(cfg), cfg.output)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _apply_overrides(load_config(args.config), args)
    _emit(ex.run_experiment(cfg), cfg.output)
    return EXIT_OK


def cmd_reproduce(args):
    over = {}
    if args.reps is not None:
        over["reps"] = args.reps
    if args.N is not None:
        over["N"] = args.N
    if args.seed is not None:
        over["seed"] = args.seed
    if args.rho_grid:
        over["rho_grid"] = [float(x) for x in args.rho_grid.split(",")]
    t0 = time.time()
    result, reports = ex.reproduce(args.figure, args.paper_scale, **over)
    _emit(result, args.output)
    ok = True
    for r in reports:
        line = f"[{args.figure}] {r.kind} {r.a} vs {r.b}: {r.verdict} ({r.detail})"
        print(line, file=sys.stderr)
        ok &= r.passed
    print(f"[{args.figure}] done in {time.time() - t0:.1f} s", file=sys.stderr)
    return EXIT_OK if ok else EXIT_VIOLATED


def _dist_from_args(args):
    if args.dist:
        try:
            return parse_dist(json.loads(args.dist))
        except json.JSONDecodeError as exc:
            raise ConfigError("dist", f"invalid JSON: {exc}") from None
        except InvalidSpec as exc:
            raise ConfigError("dist", str(exc)) from None
    return Exponential(args.mu)


def cmd_bounds(args):
    if args.L < 1 or args.d_min < 1:
        raise ConfigError("L/d_min", "must be >= 1")
    dist = _dist_from_args(args)
    print(f"L={args.L} d_min={args.d_min} dist={dist}")
    print(f"{'setting':32s} {'bound (s)':>12s}")
    for setting, value, note in bound_table(args.L, args.d_min, dist):
        shown = f"{value:12.6f}" if value is not None else f"{'n/a':>12s}  ({note})"
        print(f"{setting:32s} {shown}")
    if isinstance(dist, Exponential):
        est = harmonic_log_estimate(args.L, args.d_min, dist.rate)
        print(f"{'log estimate (display only)':32s} {est:12.6f}")
    return EXIT_OK


def _lemma_dominance(mode_set, runs, seed, out):
    from .verify import (
        check_dominance,
        coupled_departure_run,
        coupled_thread_stream_run,
        negative_control,
        random_workload,
    )
    from .workload import min_code_distance

    ok = True
    fails = {}
    counts = {}
    for i in range(runs):
        g = np.random.default_rng([seed, i])
        L = int(g.integers(2, 7))
        if mode_set == "np":
            w = random_workload(g, 50, L, d_min_at_least=L)
            h = coupled_departure_run("SEDPT_R", "SERPT_R", w, L, 1.0, g)
            checks = [("differential_vs_remaining", None)]
        elif mode_set == "redundancy":
            w = random_workload(g, 50, L, d_min_below=L)
            h = coupled_thread_stream_run("SERPT_R", "SERPT_R", w, L, 1.0, g, workload_q=pad_codes(w, L))
            checks = [("remaining_offset", max(L - min_code_distance(w), 0))]
        else:
            w = random_workload(g, 50, L)
            h = coupled_thread_stream_run("SEDPT_NR", "LOWER_BOUND_VIRTUAL", w, L, 1.0, g)
            checks = [("total_L_minus_1", None), ("mixed_2L_minus_1", None)]
        for mode, c in checks:
            r = check_dominance(h, mode, c)
            counts[mode] = counts.get(mode, 0) + 1
            if not r.passed:
                fails.setdefault(mode, (i, r.violation))
    for mode, n in counts.items():
        bad = fails.get(mode)
        neg = check_dominance(negative_control("remaining_offset(1)" if mode == "remaining_offset" else mode), mode, 1)
        good = bad is None and not neg.passed
        ok &= good
        extra = f" first violation run={bad[0]} (index, t, j, lhs, rhs)={bad[1]}" if bad else ""
        print(f"{mode}: {n} runs, {'0' if bad is None else 'some'} violations, negative control "
              f"{'fails as required' if not neg.passed else 'DID NOT FAIL'}{extra}", file=out)
    return ok


def _lemma_order(kind, runs, seed, out):
    from .verify import empirical_stochastic_order

    L = 3
    if kind == "nlu":
        dist = ShiftedExponential.with_mean(1.0, 0.4)
        wl = WorkloadSpec.explicit([Request(i, 0.0, 2, 4) for i in range(20)])
        a, b = "SEDPT_NR", "ADV_FORCED_SWITCH"
    else:
        dist = ExponentialMixture.scaled(1.0, [(0.5, 0.4), (0.5, 1.6)])
        wl = WorkloadSpec.explicit([Request(i, 0.0, 1, 3) for i in range(20)])
        a, b = "SEDPT_R", "SEDPT_WCR_nonpreemptive"
    res = empirical_stochastic_order(a, b, wl, dist, L, runs, [1, 5, 10], seed)
    for r in res:
        print(f"order-{kind} {a} <=st {b} at j={r.j}: {'pass' if r.passed else 'FAIL'} "
              f"(worst margin {r.worst_margin:+.4f}, reps {r.reps})", file=out)
    return all(r.passed for r in res)


def _lemma_invariance(runs, seed, out):
    from .verify import check_departure_invariance

    wl = WorkloadSpec(N=24, lam=2.0, arrival_mixture=BURSTY_ARRIVALS, code_mix=((0.5, (3, 1)), (0.5, (5, 3))))
    r = check_departure_invariance(["SERPT_R", "SEDPT_R", "FCFS_R"], wl, 3, Exponential(1.0), runs, seed)
    print(f"invariance over j=1..{r.J}: {'pass' if r.passed else 'FAIL'} (worst pair {r.worst})", file=out)
    return r.passed


def cmd_verify(args):
    out = sys.stdout
    lemmas = LEMMAS if args.lemma == "all" else (args.lemma,)
    ok = True
    for lemma in lemmas:
        if lemma == "invariance":
            ok &= _lemma_invariance(args.runs or 100_000, args.seed, out)
        elif lemma.startswith("dominance-"):
            ok &= _lemma_dominance(lemma.split("-", 1)[1], args.runs or 1000, args.seed, out)
        else:
            ok &= _lemma_order(lemma.split("-", 1)[1], args.runs or 10_000, args.seed, out)
    print("all selected checks passed" if ok else "SOME CHECKS FAILED", file=out)
    return EXIT_OK if ok else EXIT_VIOLATED


def build_parser():
    p = argparse.ArgumentParser(prog="redshard", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, output=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("--N", type=int, help="requests per replication")
        if output:
            sp.add_argument("--output", "-o", help="CSV path (stdout if omitted)")

    sp = sub.add_parser("run", help="one (rho, policy) cell of a config")
    sp.add_argument("--config", "-c", required=True)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--policy")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="every (rho, policy) cell of a config")
    sp.add_argument("--config", "-c", required=True)
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("reproduce", help="built-in figure setups with verdicts")
    sp.add_argument("figure", choices=sorted(ex.FIGURES))
    sp.add_argument("--paper-scale", action="store_true", help=f"N={ex.PAPER_N}, reps={ex.PAPER_REPS}")
    sp.add_argument("--rho-grid", help="comma-separated rho values")
    common(sp)
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("bounds", help="gap-bound table")
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--d-min", type=int, required=True)
    sp.add_argument("--mu", type=float, default=50.0)
    sp.add_argument("--dist", help='JSON, e.g. {"kind":"shifted_exp","mu":50,"shift_frac":0.4}')
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("verify", help="lemma check suites")
    sp.add_argument("--lemma", choices=LEMMAS + ("all",), default="all")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidSpec as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RedshardError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
