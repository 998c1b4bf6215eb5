"""Load sweeps, built-in figure setups and gap verdicts."""

from __future__ import annotations

import copy
import csv
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import GapBoundQuery, Verdict, gap_bound, verdict
from .config import parse_config
from .engine import SimConfig, _workers, run_replications
from .policies import make_policy
from .workload import min_code_distance, pad_spec, solve_lambda_for_rho

CSV_FIELDS = ("rho", "policy", "mean_flow_time", "ci_low", "ci_high", "reps", "seed")

DESK_N, DESK_REPS = 600, 50
PAPER_N, PAPER_REPS = 3000, 100

_EXP50 = {"kind": "exponential", "mu": 50.0}
_NLU50 = {"kind": "shifted_exp", "mu": 50.0, "shift_frac": 0.4}
_NSU50 = {"kind": "exp_mixture", "mu": 50.0, "components": [[0.5, 0.4], [0.5, 1.6]]}
_BURSTY = [[0.99, 0.5], [0.01, 50.5]]
_MIXED = [[0.9, [3, 1]], [0.1, [14, 10]]]
_GRID = [0.1, 0.3, 0.5, 0.7, 0.9]


def _figure(L, dist, policies, code_mix=_MIXED, variant="chunk_rate", bounds=()):
    return {
        "workload": {"mode": "stochastic", "N": DESK_N, "lambda": 1.0, "arrival_mixture": _BURSTY, "code_mix": code_mix},
        "sim": {"L": L, "dist": dist},
        "sweep": {"rho_grid": list(_GRID), "policies": policies, "rho_variant": variant},
        "bounds": [{"setting": s} for s in bounds],
        "reps": DESK_REPS,
        "seed": 2015,
    }


_PADDED = {"id": "SERPT_R_preemptive", "pad": True, "label": "SERPT_R_padded"}

# name -> (config, comparisons); a comparison is (kind, policy a, policy b, bound setting)
FIGURES = {
    "fig2a": (
        _figure(3, _EXP50, ["SERPT_R_preemptive", "SEDPT_R_nonpreemptive", "FCFS_R"], bounds=["exp_preemptive_dmin_ge_L"]),
        [("order", "SERPT_R_preemptive", "FCFS_R", None)],
    ),
    "fig2b": (
        _figure(3, _EXP50, ["SEDPT_R_nonpreemptive", "SERPT_R_preemptive", "FCFS_R"], bounds=["exp_nonpreemptive_dmin_ge_L"]),
        [("gap", "SEDPT_R_nonpreemptive", "SERPT_R_preemptive", "exp_nonpreemptive_dmin_ge_L")],
    ),
    "fig2c": (
        _figure(5, _EXP50, ["SERPT_R_preemptive", _PADDED, "FCFS_R"], bounds=["exp_preemptive_general"]),
        [("gap", "SERPT_R_preemptive", "SERPT_R_padded", "exp_preemptive_general")],
    ),
    "fig2d": (
        _figure(5, _EXP50, ["SEDPT_R_nonpreemptive", _PADDED, "FCFS_R"], bounds=["exp_nonpreemptive_general"]),
        [("gap", "SEDPT_R_nonpreemptive", "SERPT_R_padded", "exp_nonpreemptive_general")],
    ),
    "fig5": (
        _figure(
            3,
            _NLU50,
            ["SEDPT_WCR_preemptive", "SEDPT_NR_nonpreemptive", "SEDPT_R_nonpreemptive", "FCFS_WCR", "LOWER_BOUND_VIRTUAL"],
            bounds=["nlu_preemptive", "nlu_nonpreemptive"],
        ),
        [
            ("gap", "SEDPT_WCR_preemptive", "LOWER_BOUND_VIRTUAL", "nlu_preemptive"),
            ("gap", "SEDPT_NR_nonpreemptive", "LOWER_BOUND_VIRTUAL", "nlu_nonpreemptive"),
        ],
    ),
    "fig6": (
        _figure(
            3,
            _NSU50,
            ["SEDPT_R_nonpreemptive", "SEDPT_WCR_nonpreemptive"],
            code_mix=[[1.0, [3, 1]]],
            variant="min_based",
            bounds=["nsu_repetition_nonpreemptive"],
        ),
        [("diverge", "SEDPT_R_nonpreemptive", "SEDPT_WCR_nonpreemptive", None)],
    ),
}


def figure_config(name, paper_scale=False, rho_grid=None, reps=None, N=None, seed=None):
    cfg, _ = FIGURES[name]
    cfg = copy.deepcopy(cfg)
    if paper_scale:
        cfg["workload"]["N"], cfg["reps"] = PAPER_N, PAPER_REPS
    if rho_grid is not None:
        cfg["sweep"]["rho_grid"] = list(rho_grid)
    if reps is not None:
        cfg["reps"] = reps
    if N is not None:
        cfg["workload"]["N"] = N
    if seed is not None:
        cfg["seed"] = seed
    return cfg


@dataclass
class Cell:
    rho: float
    policy: str
    summary: object


@dataclass
class ExperimentResult:
    config: object
    cells: list
    bounds: list = field(default_factory=list)  # (setting, value)

    def cell(self, rho, policy):
        for c in self.cells:
            if c.policy == policy and math.isclose(c.rho, rho):
                return c
        raise KeyError((rho, policy))

    def rows(self):
        seed = self.config.seed
        out = []
        for c in self.cells:
            s = c.summary
            out.append([c.rho, c.policy, s.mean, s.ci95[0], s.ci95[1], s.reps, seed])
        for setting, value in self.bounds:
            out.append(["", f"bound:{setting}", value, value, value, 0, seed])
        return out


def _run_cell(args):
    spec, L, dist, entry, reps, seed, resample, max_events = args
    cfg = SimConfig(L, dist, make_policy(entry.id, **entry.params), seed=seed, max_events=max_events)
    if entry.pad:
        spec = pad_spec(spec, L)
    return run_replications(spec, cfg, reps, resample_arrivals=resample, base_seed=seed, method="event")


def _d_min(spec):
    if spec.is_explicit:
        return min_code_distance(spec.requests)
    return min(n - k + 1 for n, k in spec.codes())


def run_experiment(cfg):
    """Run every (rho, policy) cell of a parsed or raw config."""
    if isinstance(cfg, dict):
        cfg = parse_config(cfg)
    jobs = []
    keys = []
    for rho in cfg.rho_grid:
        lam = solve_lambda_for_rho(cfg.workload, cfg.L, cfg.dist, cfg.rho_variant, rho)
        spec = cfg.workload.with_lambda(lam)
        for entry in cfg.policies:
            jobs.append((spec, cfg.L, cfg.dist, entry, cfg.reps, cfg.seed, cfg.resample_arrivals, cfg.max_events))
            keys.append((rho, entry.name))
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            sums = list(ex.map(_run_cell, jobs))
    else:
        sums = [_run_cell(j) for j in jobs]
    cells = [Cell(rho, name, s) for (rho, name), s in zip(keys, sums)]
    bounds = []
    for b in cfg.bounds:
        d_min = b.get("d_min", _d_min(cfg.workload))
        bounds.append((b["setting"], gap_bound(GapBoundQuery(b["setting"], cfg.L, d_min, cfg.dist))))
    return ExperimentResult(cfg, cells, bounds)


def write_csv(result, path):
    """Write rows atomically: a partial file never replaces ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".redshard-", suffix=".csv", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            w.writerows(_fmt(r) for r in result.rows())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(row):
    return [f"{x:.10g}" if isinstance(x, float) else x for x in row]


def format_rows(result):
    lines = [",".join(CSV_FIELDS)]
    for r in result.rows():
        lines.append(",".join(str(x) for x in _fmt(r)))
    return "\n".join(lines)


# verdicts --------------------------------------------------------------------


@dataclass
class GapReport:
    kind: str
    a: str
    b: str
    setting: str | None
    bound: float | None
    per_rho: list  # (rho, diff, se)
    max_gap: float | None = None
    max_se: float | None = None
    verdict: str = ""
    passed: bool = True
    detail: str = ""


def _pair(result, rho, a, b):
    sa = result.cell(rho, a).summary
    sb = result.cell(rho, b).summary
    pooled = math.sqrt(sa.std_err**2 + sb.std_err**2)
    d = sa.values - sb.values
    paired = float(d.std(ddof=1) / math.sqrt(len(d)))
    return sa.mean - sb.mean, pooled, paired


def gap_report(result, kind, a, b, setting):
    cfg = result.config
    per = []
    for rho in cfg.rho_grid:
        diff, pooled, paired = _pair(result, rho, a, b)
        per.append((rho, diff, pooled, paired))
    rep = GapReport(kind, a, b, setting, None, per)
    if kind == "gap":
        bound = dict(result.bounds).get(setting)
        if bound is None:
            bound = gap_bound(GapBoundQuery(setting, cfg.L, _d_min(cfg.workload), cfg.dist))
        i = int(np.argmax([p[1] for p in per]))
        rep.bound, rep.max_gap, rep.max_se = bound, per[i][1], per[i][2]
        v = verdict(rep.max_gap, rep.max_se, bound)
        rep.verdict = v.value
        rep.passed = v != Verdict.VIOLATED
        rep.detail = f"max gap {rep.max_gap:.5f} s (se {rep.max_se:.5f}) at rho={per[i][0]} vs bound {bound:.6f} s"
    elif kind == "order":
        rep.passed = all(p[1] < 0 for p in per)
        rep.verdict = "ordered" if rep.passed else "not ordered"
        rep.detail = f"{a} - {b} per rho: " + ", ".join(f"{p[1]:+.5f}" for p in per)
    elif kind == "diverge":
        below = all(p[1] <= 0 for p in per)
        hi = [p for p in per if p[0] >= 0.5 - 1e-12]
        grows = all(
            (-q[1] - 1.96 * q[3]) > (-p[1] + 1.96 * p[3]) for p, q in zip(hi, hi[1:])
        )
        rep.passed = below and grows and len(hi) >= 2
        rep.verdict = "diverging" if rep.passed else "not diverging"
        rep.detail = f"{b} - {a} per rho: " + ", ".join(f"{-p[1]:+.5f}±{1.96 * p[3]:.5f}" for p in per)
    return rep


def reproduce(name, paper_scale=False, **overrides):
    """Run a built-in figure setup and return (result, reports)."""
    if name not in FIGURES:
        raise KeyError(f"unknown figure {name!r}; choose from {sorted(FIGURES)}")
    cfg = figure_config(name, paper_scale, **overrides)
    result = run_experiment(cfg)
    reports = [gap_report(result, *c) for c in FIGURES[name][1]]
    return result, reports
