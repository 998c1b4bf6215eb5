from collections import Counter

import numpy as np
import pytest

from redshard.distributions import Exponential, ExponentialMixture, ShiftedExponential
from redshard.engine import SimConfig, simulate
from redshard.exceptions import IllegalDirective, InvalidSpec, WrongWorkload
from redshard.model import Assign, Preempt, SystemState
from redshard.policies import POLICY_IDS, PolicySpec, Trigger, canonical_id, decide, make_policy
from redshard.verify import random_workload
from redshard.workload import Request, example_one, example_two

WORK_CONSERVING = [
    "SERPT_R_preemptive",
    "SERPT_R_nonpreemptive",
    "SEDPT_R_nonpreemptive",
    "FCFS_R",
    "FCFS_WCR",
    "FCFS_WCR_nonpreemptive",
    "SEDPT_WCR_preemptive",
    "SEDPT_WCR_nonpreemptive",
]
FEASIBLE = WORK_CONSERVING + ["SEDPT_NR_nonpreemptive", "ADV_FORCED_SWITCH", "ADV_RANDOM"]
DISTS = [Exponential(1.0), ShiftedExponential.with_mean(1.0, 0.4), ExponentialMixture.scaled(1.0, [(0.5, 0.4), (0.5, 1.6)])]


def state(requests, L, assigns=()):
    s = SystemState(L)
    for r in requests:
        s.arrive(r)
    s.apply([Assign(t, rid) for t, rid in assigns], 0.0, False, lambda t: 1.0)
    return s


def per_request(batch):
    return Counter(d.request for d in batch if isinstance(d, Assign))


class TestCatalog:
    def test_ids_and_aliases(self):
        for pid in ["FCFS_R", "FCFS_WCR", "SERPT_R_preemptive", "SEDPT_R_nonpreemptive", "SEDPT_NR_nonpreemptive",
                    "SEDPT_WCR_preemptive", "LOWER_BOUND_VIRTUAL", "SCRIPT_Q1", "SCRIPT_Q2"]:
            assert pid in POLICY_IDS
            assert make_policy(pid).id == pid
        assert canonical_id("SERPT_R") == "SERPT_R_preemptive"
        assert canonical_id("SEDPT_WCR") == "SEDPT_WCR_preemptive"
        with pytest.raises(InvalidSpec):
            make_policy("SJF")
        with pytest.raises(InvalidSpec):
            make_policy("FCFS_R", epsilon=1)
        assert PolicySpec("SCRIPT_Q2", {"epsilon": 0.5}).build().params == {"epsilon": 0.5}

    def test_flags(self):
        assert make_policy("SERPT_R").preemptive
        assert not make_policy("SEDPT_R").preemptive
        assert not make_policy("SEDPT_NR").work_conserving
        assert make_policy("LOWER_BOUND_VIRTUAL").bound_only


class TestDecisions:
    def test_serpt_example_one(self):
        snap = state(example_one().requests, 4).snapshot(0.0)
        assert per_request(decide("SERPT_R", snap, Trigger.START)) == {0: 4}

    def test_q1_example_one(self):
        snap = state(example_one().requests, 4).snapshot(0.0)
        assert per_request(decide("SCRIPT_Q1", snap, Trigger.START)) == {0: 2, 1: 2}

    def test_sedpt_nr_cap(self):
        snap = state([Request(0, 0.0, 2, 5)], 3).snapshot(0.0)
        batch = decide("SEDPT_NR", snap, Trigger.START)
        assert per_request(batch) == {0: 2}

    def test_serpt_spills_when_chunks_run_out(self):
        reqs = [Request(0, 0.0, 1, 2), Request(1, 0.0, 3, 4)]
        snap = state(reqs, 5).snapshot(0.0)
        assert per_request(decide("SERPT_R", snap, Trigger.START)) == {0: 2, 1: 3}

    def test_sedpt_r_orders_by_differential(self):
        # request 0 has alpha=2 with 2 threads (diff 0); request 1 alpha=1, diff 1
        reqs = [Request(0, 0.0, 2, 4), Request(1, 0.0, 1, 3)]
        snap = state(reqs, 4, [(0, 0), (1, 0)]).snapshot(0.0)
        batch = decide("SEDPT_R", snap, Trigger.COMPLETION)
        assert per_request(batch) == {0: 2}
        assert not any(isinstance(d, Preempt) for d in batch)

    def test_tie_break_by_arrival_then_id(self):
        reqs = [Request(0, 0.0, 1, 1), Request(1, 0.0, 1, 1), Request(2, 0.0, 1, 1)]
        snap = state(reqs, 2).snapshot(0.0)
        assert per_request(decide("SERPT_R", snap, Trigger.START)) == {0: 1, 1: 1}

    def test_fcfs_r(self):
        reqs = [Request(0, 0.0, 3, 3), Request(1, 0.0, 1, 5)]
        snap = state(reqs, 5).snapshot(0.0)
        assert per_request(decide("FCFS_R", snap, Trigger.START)) == {0: 3, 1: 2}

    def test_wcr_nr_first_then_redundant(self):
        snap = state([Request(0, 0.0, 1, 3), Request(1, 0.0, 1, 3)], 3).snapshot(0.0)
        batch = decide("SEDPT_WCR_nonpreemptive", snap, Trigger.START)
        assert per_request(batch) == {0: 2, 1: 1}

    def test_wcr_preempts_redundant_on_arrival(self):
        s = state([Request(0, 0.0, 1, 3)], 3, [(0, 0), (1, 0), (2, 0)])
        s.arrive(Request(1, 0.5, 1, 3))
        batch = decide("SEDPT_WCR_preemptive", s.snapshot(0.5), Trigger.ARRIVAL)
        pre = [d for d in batch if isinstance(d, Preempt)]
        assert len(pre) == 1
        assert per_request(batch) == {1: 1}
        # non-preemptive variant leaves the redundant chunks alone
        assert decide("SEDPT_WCR_nonpreemptive", s.snapshot(0.5), Trigger.ARRIVAL) == []

    def test_forced_switch_preempts(self):
        s = state([Request(0, 0.0, 2, 4)], 2, [(0, 0), (1, 0)])
        batch = decide("ADV_FORCED_SWITCH", s.snapshot(0.5), Trigger.COMPLETION)
        assert sum(isinstance(d, Preempt) for d in batch) == 2
        assert all(d.chunk is None for d in batch if isinstance(d, Assign))

    def test_q2_idles_until_second_arrival(self):
        reqs = example_two(0.01).requests
        s = SystemState(2)
        s.arrive(reqs[0])
        assert decide(make_policy("SCRIPT_Q2", epsilon=0.01), s.snapshot(0.0), Trigger.START) == []
        s.arrive(reqs[1])
        assert per_request(decide(make_policy("SCRIPT_Q2", epsilon=0.01), s.snapshot(0.01), Trigger.ARRIVAL)) == {1: 2}

    def test_scripts_reject_other_workloads(self):
        wl = [Request(0, 0.0, 1, 1)]
        for pid in ("SCRIPT_Q1", "SCRIPT_Q2"):
            with pytest.raises(WrongWorkload):
                simulate(wl, SimConfig(4, Exponential(1.0), pid))
        with pytest.raises(WrongWorkload):
            simulate(example_two(0.02), SimConfig(2, Exponential(1.0), make_policy("SCRIPT_Q2", epsilon=0.01)))

    def test_engine_rejects_preempt_from_nonpreemptive(self):
        class Bad(type(make_policy("SEDPT_R"))):
            def decide(self, snap, trigger):
                busy = [t.id for t in snap.threads if t.request is not None]
                return [Preempt(busy[0])] if busy and trigger == Trigger.COMPLETION else super().decide(snap, trigger)

        with pytest.raises(IllegalDirective):
            simulate([Request(0, 0.0, 3, 3)], SimConfig(2, Exponential(1.0), Bad()))


def _random_runs(pid, count, seed):
    g = np.random.default_rng(seed)
    for i in range(count):
        L = int(g.integers(1, 7))
        wl = random_workload(g, 30, L)
        yield wl, SimConfig(L, DISTS[i % 3], pid, seed=i, check_invariants=True)


class TestPerEventProperties:
    @pytest.mark.parametrize("pid", WORK_CONSERVING)
    def test_work_conserving(self, pid, checked_engine):
        found = checked_engine(work_conserving=True)
        for wl, cfg in _random_runs(pid, 1000, 1):
            simulate(wl, cfg)
        assert found == []

    def test_sedpt_nr_cap_every_event(self, checked_engine):
        found = checked_engine(nr_cap=True)
        for wl, cfg in _random_runs("SEDPT_NR", 1000, 2):
            simulate(wl, cfg)
        assert found == []

    def test_checker_detects_idling(self, checked_engine):
        # SEDPT_NR idles threads on purpose; the checker must notice
        found = checked_engine(work_conserving=True)
        simulate([Request(0, 0.0, 1, 3)], SimConfig(3, Exponential(1.0), "SEDPT_NR", check_invariants=True))
        assert found

    @pytest.mark.parametrize("pid", FEASIBLE)
    def test_chunk_accounting(self, pid):
        for wl, cfg in _random_runs(pid, 60, 3):
            tr = simulate(wl, cfg)
            tot = tr.totals
            assert tot["downloaded"] == len(tr.chunk_departures) >= sum(r.k for r in wl)
            assert all(c >= r.arrival for c, r in zip(tr.completions, wl))
            assert tr.chunk_departures == sorted(tr.chunk_departures)


def _captured_snapshots(pid, seed):
    seen = []
    base = make_policy(pid)

    class Spy(type(base)):
        def decide(self, snap, trigger):
            seen.append((snap, trigger))
            return super().decide(snap, trigger)

    spy = Spy.__new__(Spy)
    spy.__dict__.update(base.__dict__)
    g = np.random.default_rng(seed)
    for i in range(20):
        L = int(g.integers(1, 6))
        simulate(random_workload(g, 20, L), SimConfig(L, DISTS[i % 3], spy, seed=i))
    return seen


def _signature(r):
    return (r.arrival, r.k, r.n, r.downloaded, r.in_service, r.paused, r.fresh)


def _batch_shape(snap, batch):
    sig = {r.id: _signature(r) for r in snap.requests}
    of_thread = {t.id: t.request for t in snap.threads}
    return Counter(
        ("assign", sig[d.request], d.chunk) if isinstance(d, Assign) else ("preempt", sig[of_thread[d.thread]])
        for d in batch
    )


class TestPurity:
    @pytest.mark.parametrize("pid", FEASIBLE)
    def test_deterministic(self, pid):
        for snap, trigger in _captured_snapshots(pid, 5):
            assert decide(pid, snap, trigger) == decide(pid, snap, trigger)

    @pytest.mark.parametrize("pid", [p for p in FEASIBLE if p != "ADV_RANDOM"])
    def test_label_equivariance(self, pid):
        # permuting ids among requests in identical states permutes the batch
        swapped = 0
        for snap, trigger in _captured_snapshots(pid, 6):
            groups = {}
            for r in snap.requests:
                groups.setdefault(_signature(r), []).append(r.id)
            perm = {}
            for ids in groups.values():
                perm.update(zip(ids, reversed(ids)))
            if all(a == b for a, b in perm.items()):
                continue
            swapped += 1
            relabel = snap._replace(
                requests=tuple(r._replace(id=perm[r.id]) for r in snap.requests),
                threads=tuple(t._replace(request=perm.get(t.request, t.request)) for t in snap.threads),
            )
            assert _batch_shape(snap, decide(pid, snap, trigger)) == _batch_shape(relabel, decide(pid, relabel, trigger))
        assert swapped > 0

    def test_identical_requests_multiset(self):
        reqs = [Request(i, 0.0, 2, 3) for i in range(3)]
        snap = state(reqs, 4).snapshot(0.0)
        perm = {0: 2, 1: 0, 2: 1}
        relabel = snap._replace(requests=tuple(sorted((r._replace(id=perm[r.id]) for r in snap.requests), key=lambda r: r.id)))
        for pid in WORK_CONSERVING + ["SEDPT_NR"]:
            a = sorted(per_request(decide(pid, snap, Trigger.START)).values())
            b = sorted(per_request(decide(pid, relabel, Trigger.START)).values())
            assert a == b
