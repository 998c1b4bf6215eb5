from fractions import Fraction

import numpy as np
import pytest

from oracles import example_one_q1, example_one_serpt
from redshard._markov import markov_flow_times
from redshard.distributions import Exponential, ExponentialMixture, ShiftedExponential
from redshard.engine import SimConfig, Trace, average_flow_time, markov_applicable, run_replications, simulate
from redshard.exceptions import EventCapExceeded, IncompleteTrace, InvalidSpec, StalledSimulation
from redshard.policies import Policy
from redshard.rng import Streams
from redshard.verify import random_workload
from redshard.workload import BURSTY_ARRIVALS, MIXED_CODES, Request, WorkloadSpec, example_one, example_two

EXP1 = Exponential(1.0)


def within(summary, target, k=3.0):
    return abs(summary.mean - target) <= k * summary.std_err


class TestOracles:
    def test_hand_values(self):
        assert example_one_serpt() == 1
        assert example_one_q1() == Fraction(61, 64)


class TestSimulate:
    def test_config_validation(self):
        with pytest.raises(InvalidSpec):
            SimConfig(0, EXP1, "FCFS_R")
        with pytest.raises(InvalidSpec):
            SimConfig(2, EXP1, "FCFS_R", max_events=0)

    def test_single_chunk_flow_is_download_time(self):
        s = run_replications([Request(0, 0.0, 1, 1)], SimConfig(1, EXP1, "FCFS_R", seed=1), 10**6)
        assert within(s, 1.0)

    def test_trace_contents(self):
        wl = example_one().requests
        tr = simulate(wl, SimConfig(4, EXP1, "SERPT_R", seed=3))
        assert tr.arrivals == [0.0, 0.0]
        assert tr.chunk_task_arrivals == [0.0, 0.0, 0.0]
        assert tr.chunk_departures == sorted(tr.chunk_departures)
        assert tr.totals["downloaded"] == len(tr.chunk_departures) == 3
        assert tr.totals["terminated"] == 3  # the other three redundant downloads of request 1
        # each completion coincides with a departure instant
        assert all(c in tr.chunk_departures for c in tr.completions)

    def test_reproducible(self):
        spec = WorkloadSpec(N=200, lam=100.0, arrival_mixture=BURSTY_ARRIVALS, code_mix=MIXED_CODES)
        for pid in ("SEDPT_WCR_preemptive", "SERPT_R", "ADV_RANDOM"):
            cfg = SimConfig(3, ShiftedExponential.with_mean(50, 0.4), pid, seed=42, record_snapshots=True)
            a, b = simulate(spec, cfg), simulate(spec, cfg)
            assert a == b

    def test_crn_same_workload_across_policies(self):
        spec = WorkloadSpec(N=50, lam=100.0, arrival_mixture=BURSTY_ARRIVALS, code_mix=MIXED_CODES)
        a = simulate(spec, SimConfig(3, Exponential(50.0), "SERPT_R", seed=9))
        b = simulate(spec, SimConfig(3, Exponential(50.0), "FCFS_R", seed=9))
        assert a.arrivals == b.arrivals and a.chunk_task_arrivals == b.chunk_task_arrivals

    def test_snapshot_history(self):
        g = np.random.default_rng(4)
        for i in range(40):
            wl = random_workload(g, 25, 3)
            k = {r.id: r.k for r in wl}
            tr = simulate(wl, SimConfig(3, EXP1, "SEDPT_R", seed=i, record_snapshots=True, check_invariants=True))
            done = set()
            prev_total, prev_arrived = None, 0
            for d in tr.snapshots:
                ids = {rid for rid, *_ in d["req"]}
                assert not ids & done  # finished requests never come back
                total = sum(k[rid] - dl for rid, dl, *_ in d["req"])
                arrived = sum(1 for r in wl if r.arrival <= d["t"])
                if prev_total is not None and arrived == prev_arrived:
                    assert total <= prev_total
                busy = [t for t in d["thr"] if t is not None]
                assert len(busy) == sum(x[2] for x in d["req"]) <= 3
                done |= {r.id for r in wl if r.arrival <= d["t"]} - ids
                prev_total, prev_arrived = total, arrived

    def test_event_cap(self):
        with pytest.raises(EventCapExceeded):
            simulate([Request(0, 0.0, 50, 50)], SimConfig(1, EXP1, "FCFS_R", max_events=10))

    def test_stall_detected(self):
        class Lazy(Policy):
            id = "LAZY"

            def decide(self, snap, trigger):
                return []

        with pytest.raises(StalledSimulation):
            simulate([Request(0, 0.0, 1, 1)], SimConfig(1, EXP1, Lazy()))

    def test_stop_after(self):
        tr = simulate([Request(0, 0.0, 10, 10)], SimConfig(2, EXP1, "FCFS_R"), stop_after=4)
        assert len(tr.chunk_departures) == 4
        with pytest.raises(IncompleteTrace):
            tr.average_flow_time()

    def test_virtual_bound_runs_all_threads(self):
        tr = simulate([Request(0, 0.0, 1, 1)], SimConfig(3, EXP1, "LOWER_BOUND_VIRTUAL", seed=2))
        assert len(tr.chunk_departures) == 1
        assert tr.completions[0] == tr.chunk_departures[0]


class TestAverageFlowTime:
    def test_values(self):
        tr = Trace([0.0, 1.0], [], completions=[2.0, 3.0])
        assert average_flow_time(tr) == 2.0
        assert average_flow_time(Trace([0.5], [], completions=[0.5])) == 0.0

    def test_incomplete(self):
        with pytest.raises(IncompleteTrace):
            average_flow_time(Trace([0.0, 1.0], [], completions=[2.0, None]))
        with pytest.raises(IncompleteTrace):
            average_flow_time(Trace([0.0, 1.0], [], completions=[2.0]))


class TestExamples:
    def test_example_one_event_engine(self):
        wl = example_one()
        s = run_replications(wl, SimConfig(4, EXP1, "SERPT_R", seed=5), 20_000, method="event")
        assert within(s, float(example_one_serpt()))
        q = run_replications(wl, SimConfig(4, EXP1, "SCRIPT_Q1", seed=5), 20_000, method="event")
        assert within(q, float(example_one_q1()))

    def test_example_one_replications(self):
        s = run_replications(example_one(), SimConfig(4, EXP1, "SERPT_R", seed=6), 10**5)
        assert 0.99 <= s.mean <= 1.01
        assert s.ci95[1] - s.ci95[0] < 0.01

    def test_example_two_event_engine(self):
        eps = 0.01
        wl = example_two(eps)
        s = run_replications(wl, SimConfig(2, EXP1, "SERPT_R_nonpreemptive", seed=7), 20_000, method="event")
        assert within(s, 1.25 - eps / 2)
        q = run_replications(wl, SimConfig(2, EXP1, "SCRIPT_Q2", seed=7), 20_000, method="event")
        assert within(q, 1 + eps / 2)

    def test_example_two_large(self):
        eps = 0.01
        s = run_replications(example_two(eps), SimConfig(2, EXP1, "SERPT_R_nonpreemptive", seed=8), 10**6)
        assert s.method == "markov"
        assert within(s, 1.25 - eps / 2)


class TestReplications:
    def test_reps_validation(self):
        with pytest.raises(InvalidSpec):
            run_replications(example_one(), SimConfig(4, EXP1, "SERPT_R"), 1)

    def test_two_reps_distinct(self):
        s = run_replications(example_one(), SimConfig(4, EXP1, "SERPT_R"), 2, method="event")
        assert s.std_err > 0
        assert s.values[0] != s.values[1]

    def test_deterministic_times_zero_se(self):
        det = ShiftedExponential(1.0, 1e12)
        s = run_replications(example_one(), SimConfig(4, det, "SERPT_R"), 20)
        assert s.std_err < 1e-9
        assert s.mean == pytest.approx(1.5)  # request 1 at 1, request 2 at 2

    def test_first_departure_mean(self):
        spec = WorkloadSpec(N=30, lam=2.0, arrival_mixture=BURSTY_ARRIVALS, code_mix=((1.0, (3, 1)),))
        L = 3
        for pid in ("SERPT_R", "SEDPT_R", "FCFS_R", "SEDPT_WCR_preemptive"):
            cfg = SimConfig(L, EXP1, pid)
            t1 = np.array([simulate(spec, cfg, Streams(11).child(r), stop_after=1).chunk_departures[0]
                           for r in range(20_000)])
            se = t1.std(ddof=1) / np.sqrt(len(t1))
            assert abs(t1.mean() - 1 / L) < 3 * se

    def test_resample_flag(self):
        spec = WorkloadSpec(N=20, lam=5.0, arrival_mixture=BURSTY_ARRIVALS, code_mix=MIXED_CODES)
        cfg = SimConfig(3, ShiftedExponential.with_mean(1, 0.4), "SEDPT_R", seed=3)
        a = run_replications(spec, cfg, 5, resample_arrivals=False)
        b = run_replications(spec, cfg, 5, resample_arrivals=True)
        assert not np.array_equal(a.values, b.values)

    def test_method_choice(self):
        assert markov_applicable(example_one(), SimConfig(4, EXP1, "SERPT_R"))
        assert not markov_applicable(example_one(), SimConfig(4, ShiftedExponential(0.1, 2.0), "SERPT_R"))
        assert not markov_applicable(example_one(), SimConfig(4, EXP1, "ADV_RANDOM"))
        with pytest.raises(InvalidSpec):
            run_replications(example_one(), SimConfig(4, EXP1, "SERPT_R"), 3, method="magic")

    @pytest.mark.parametrize("pid", ["SERPT_R", "SEDPT_R", "SEDPT_NR", "FCFS_R", "FCFS_WCR", "SEDPT_WCR_preemptive",
                                     "SEDPT_WCR_nonpreemptive", "ADV_FORCED_SWITCH"])
    def test_markov_path_matches_event_engine(self, pid):
        g = np.random.default_rng(abs(hash(pid)) % 2**32)
        for i in range(3):
            L = int(g.integers(2, 5))
            wl = WorkloadSpec.explicit(random_workload(g, 8, L, spread=0.5))
            cfg = SimConfig(L, Exponential(2.0), pid, seed=i)
            ev = run_replications(wl, cfg, 4000, method="event")
            mk = run_replications(wl, cfg, 40_000, method="markov")
            assert abs(ev.mean - mk.mean) < 4 * np.hypot(ev.std_err, mk.std_err)

    def test_markov_flow_times_shape(self):
        v = markov_flow_times(example_one(), SimConfig(4, EXP1, "SERPT_R"), 100, seed=1)
        assert v.shape == (100,) and (v > 0).all()

    def test_monotone_in_load(self):
        res = []
        for lam in (20.0, 40.0, 60.0):
            spec = WorkloadSpec(N=300, lam=lam, arrival_mixture=BURSTY_ARRIVALS, code_mix=MIXED_CODES)
            res.append(run_replications(spec, SimConfig(3, Exponential(50.0), "SERPT_R", seed=2015), 20))
        for a, b in zip(res, res[1:]):
            assert b.mean >= a.mean - 2 * np.hypot(a.std_err, b.std_err)


def test_mixture_engine_runs():
    spec = WorkloadSpec(N=100, lam=30.0, arrival_mixture=BURSTY_ARRIVALS, code_mix=((1.0, (3, 1)),))
    cfg = SimConfig(3, ExponentialMixture.scaled(50.0, [(0.5, 0.4), (0.5, 1.6)]), "SEDPT_WCR_nonpreemptive", check_invariants=True)
    assert simulate(spec, cfg).average_flow_time() > 0
