"""Discrete-event engine and replication driver.

Events are arrivals and chunk completions.  All events sharing a timestamp
form one batch: completions first (lowest thread id first), then arrivals,
then a single policy decision.  Scheduled completions live in a heap and are
cancelled lazily through per-thread generation counters.
"""

from __future__ import annotations

import heapq
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import Exponential
from .exceptions import EventCapExceeded, IncompleteTrace, InvalidSpec, StalledSimulation
from .model import SystemState
from .policies import Trigger, make_policy
from .rng import AttemptDraws, Streams
from .workload import WorkloadSpec, generate_requests, validate_requests


@dataclass
class SimConfig:
    L: int
    dist: object
    policy: object
    seed: int = 0
    record_snapshots: bool = False
    max_events: int = 50_000_000
    check_invariants: bool = False

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise InvalidSpec(f"L must be a positive integer, got {self.L!r}")
        if self.max_events <= 0:
            raise InvalidSpec("max_events must be positive")
        self.policy = make_policy(self.policy)


@dataclass
class Trace:
    arrivals: list
    chunk_task_arrivals: list
    chunk_departures: list = field(default_factory=list)
    completions: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    totals: dict = field(default_factory=dict)

    def average_flow_time(self):
        return average_flow_time(self)


def average_flow_time(trace, workload=None):
    """(1/N) sum_i (c_i - a_i); raises IncompleteTrace if any c_i is missing."""
    arrivals = trace.arrivals if workload is None else [r.arrival for r in workload]
    comp = trace.completions
    if len(comp) != len(arrivals) or any(c is None for c in comp):
        raise IncompleteTrace("not every request completed")
    return math.fsum(c - a for c, a in zip(comp, arrivals)) / len(arrivals)


def _requests(workload, streams):
    if isinstance(workload, WorkloadSpec):
        return generate_requests(workload, streams)
    return validate_requests(workload)


def simulate(workload, cfg, rng=None, stop_after=None):
    """Run one sample path of ``cfg.policy`` on ``workload``.

    ``workload`` is a request sequence or a :class:`WorkloadSpec`; ``rng`` a
    :class:`Streams` or int seed (defaults to ``cfg.seed``).  With
    ``stop_after`` the run ends after that many chunk departures.
    """
    streams = rng if isinstance(rng, Streams) else Streams(cfg.seed if rng is None else int(rng))
    reqs = _requests(workload, streams)
    policy = cfg.policy
    policy.check_workload(reqs, cfg.L)
    if policy.bound_only:
        return _simulate_virtual(reqs, cfg, streams, stop_after)

    L = cfg.L
    dist = cfg.dist
    draws = AttemptDraws(streams, L)
    from_variates = dist.from_variates

    def draw(t):
        e, u = draws.next(t)
        return from_variates(e, u)

    state = SystemState(L)
    N = len(reqs)
    trace = Trace([r.arrival for r in reqs], [r.arrival for r in reqs for _ in range(r.k)])
    completions = [None] * N
    departures = trace.chunk_departures
    heap = []
    gen = state.gen
    ai = 0
    events = 0
    first = True
    allow_preempt = policy.preemptive
    inf = math.inf
    while state.active or ai < N:
        while heap and heap[0][2] != gen[heap[0][1]]:
            heapq.heappop(heap)
        tc = heap[0][0] if heap else inf
        ta = reqs[ai].arrival if ai < N else inf
        now = tc if tc <= ta else ta
        if now == inf:
            raise StalledSimulation(f"{len(state.active)} requests unfinished with no pending event")
        batch = []
        while heap and heap[0][0] == now:
            item = heapq.heappop(heap)
            if item[2] == gen[item[1]]:
                batch.append(item[1])
        batch.sort()
        arrived = False
        for t in batch:
            if state.threads[t] is None:  # terminated earlier in this batch
                continue
            rid, done = state.complete(t, now)
            departures.append(now)
            if done:
                completions[rid] = now
        while ai < N and reqs[ai].arrival == now:
            state.arrive(reqs[ai])
            ai += 1
            arrived = True
        events += len(batch) + arrived
        if events > cfg.max_events:
            raise EventCapExceeded(f"more than {cfg.max_events} events")
        if stop_after is not None and len(departures) >= stop_after:
            break
        trigger = Trigger.START if first else (Trigger.ARRIVAL if arrived else Trigger.COMPLETION)
        first = False
        if state.active:
            snap = state.snapshot(now)
            directives = policy.decide(snap, trigger)
            if directives:
                for item in state.apply(directives, now, allow_preempt, draw):
                    heapq.heappush(heap, item)
        if cfg.check_invariants:
            state.check_invariants()
        if cfg.record_snapshots:
            trace.snapshots.append(state.snapshot(now).digest())
    trace.completions = completions
    trace.totals = {
        "downloaded": state.downloaded,
        "preempted": state.preempted,
        "terminated": state.terminated,
        "events": events,
    }
    return trace


def _simulate_virtual(reqs, cfg, streams, stop_after=None):
    """The bound construction: all L threads run whenever work remains.

    Each thread downloads one chunk at a time without preemption.  A departure
    is credited to the unfinished request with the fewest remaining chunks
    (earliest arrival, then lowest id, on ties).  When no work remains every
    thread idles and in-progress downloads are dropped; the next arrival
    restarts all L threads.
    """
    L = cfg.L
    dist = cfg.dist
    draws = AttemptDraws(streams, L)
    N = len(reqs)
    trace = Trace([r.arrival for r in reqs], [r.arrival for r in reqs for _ in range(r.k)])
    completions = [None] * N
    remaining = {}
    finish = [math.inf] * L
    ai = 0
    events = 0
    inf = math.inf
    while remaining or ai < N:
        tc = min(finish)
        ta = reqs[ai].arrival if ai < N else inf
        now = tc if tc <= ta else ta
        for t in range(L):
            if finish[t] == now:
                if not remaining:
                    break
                rid = min(remaining, key=lambda i: (remaining[i], reqs[i].arrival, i))
                remaining[rid] -= 1
                trace.chunk_departures.append(now)
                if remaining[rid] == 0:
                    del remaining[rid]
                    completions[rid] = now
                finish[t] = now + dist.from_variates(*draws.next(t))
                events += 1
        was_empty = not remaining
        while ai < N and reqs[ai].arrival == now:
            remaining[reqs[ai].id] = reqs[ai].k
            ai += 1
            events += 1
        if not remaining:
            finish = [inf] * L
        elif was_empty:
            finish = [now + dist.from_variates(*draws.next(t)) for t in range(L)]
        if events > cfg.max_events:
            raise EventCapExceeded(f"more than {cfg.max_events} events")
        if stop_after is not None and len(trace.chunk_departures) >= stop_after:
            break
    trace.completions = completions
    trace.totals = {"downloaded": len(trace.chunk_departures), "preempted": 0, "terminated": 0, "events": events}
    return trace


@dataclass
class Summary:
    mean: float
    std_err: float
    ci95: tuple
    reps: int
    values: np.ndarray = field(repr=False, default=None)
    method: str = "event"


def summarize(values, method="event"):
    v = np.asarray(values, dtype=float)
    n = len(v)
    mean = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Summary(mean, se, (mean - 1.96 * se, mean + 1.96 * se), n, v, method)


MARKOV_MAX_N = 64


def _one_rep(args):
    workload, cfg, base_seed, r, fixed = args
    streams = Streams(base_seed).child(r)
    if fixed is not None:
        workload = fixed
    return simulate(workload, cfg, streams).average_flow_time()


def _workers():
    try:
        return max(1, int(os.environ.get("REDSHARD_THREADS", "1")))
    except ValueError:
        return 1


def run_replications(workload, cfg, reps, resample_arrivals=True, base_seed=None, method="auto"):
    """Independent replications of the average flow time.

    Replication ``r`` uses ``Streams(base_seed).child(r)``, so two policies run
    with the same seed see the same arrivals, codes and per-thread variates.
    ``method`` is ``"event"`` (general engine), ``"markov"`` (exponential
    jump-chain, see :mod:`redshard._markov`) or ``"auto"``.
    """
    if reps < 2:
        raise InvalidSpec("reps must be >= 2")
    seed = cfg.seed if base_seed is None else base_seed
    if not isinstance(workload, WorkloadSpec):
        workload = WorkloadSpec.explicit(workload)
    fixed = None
    if not resample_arrivals and not workload.is_explicit:
        fixed = generate_requests(workload, Streams(seed).child(0))
    if method == "auto":
        method = "markov" if markov_applicable(workload, cfg) else "event"
    if method == "markov":
        from ._markov import markov_flow_times

        wl = WorkloadSpec.explicit(fixed) if fixed is not None else workload
        return summarize(markov_flow_times(wl, cfg, reps, seed), "markov")
    if method != "event":
        raise InvalidSpec(f"unknown method {method!r}")
    jobs = [(workload, cfg, seed, r, fixed) for r in range(reps)]
    workers = min(_workers(), reps)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            values = list(ex.map(_one_rep, jobs, chunksize=max(1, reps // (4 * workers))))
    else:
        values = [_one_rep(j) for j in jobs]
    return summarize(values, "event")


def markov_applicable(workload, cfg):
    return (
        isinstance(cfg.dist, Exponential)
        and cfg.policy.markov_safe
        and not cfg.policy.bound_only
        and workload.N <= MARKOV_MAX_N
    )
