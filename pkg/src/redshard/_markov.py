"""Vectorised jump-chain simulation for exponential downloading times.

With exponential chunks the system is a continuous-time Markov chain whose
state is, per unfinished request in arrival order, ``(k, n, downloaded,
threads)``: paused attempts carry no memory and every busy thread finishes at
rate mu, so the departing thread is uniform over busy threads.  Policy
decisions depend only on that state (plus the trigger), so they are computed
once per (state, event) and cached in integer transition tables.

All replications then advance in lockstep with numpy.  Total flow time is the
integral of the number of requests in the system, so request identities are
not tracked.  Policies flagged ``uses_identity`` keep the real ids and the
arrival count in the state key instead of positions.

Variates come from one generator per run (``Streams(seed).get("markov")``)
rather than from per-replication streams, so results agree with the event
engine in law, not path by path.
"""

from __future__ import annotations

import numpy as np

from .exceptions import EventCapExceeded, InvalidSpec, StalledSimulation
from .model import SystemState, _Req
from .policies import Trigger
from .rng import Streams
from .workload import Request, draw_arrays

_INIT = ("init",)


class _Chain:
    def __init__(self, policy, L):
        self.policy = policy
        self.L = L
        self.identity = policy.uses_identity
        self.keys = []
        self.index = {}
        self.nact = np.zeros(64, dtype=np.int64)
        self.busy = np.zeros(64, dtype=np.int64)
        self.dep = np.full((64, L), -1, dtype=np.int64)
        self.arr = np.full((64, 1), -1, dtype=np.int64)
        self.sid(_INIT)

    def sid(self, key):
        s = self.index.get(key)
        if s is not None:
            return s
        s = len(self.keys)
        self.keys.append(key)
        self.index[key] = s
        if s >= len(self.nact):
            grow = len(self.nact)
            self.nact = np.concatenate([self.nact, np.zeros(grow, dtype=np.int64)])
            self.busy = np.concatenate([self.busy, np.zeros(grow, dtype=np.int64)])
            self.dep = np.concatenate([self.dep, np.full((grow, self.L), -1, dtype=np.int64)])
            self.arr = np.concatenate([self.arr, np.full((grow, self.arr.shape[1]), -1, dtype=np.int64)])
        entries = () if key is _INIT else key[1]
        self.nact[s] = len(entries)
        self.busy[s] = sum(e[-1] for e in entries)
        return s

    def ensure_classes(self, m):
        if self.arr.shape[1] < m:
            extra = np.full((len(self.arr), m - self.arr.shape[1]), -1, dtype=np.int64)
            self.arr = np.concatenate([self.arr, extra], axis=1)

    # canonical state <-> key
    def _build(self, key):
        st = SystemState(self.L)
        if key is _INIT:
            return st
        arrived, entries = key
        tid = 0
        for pos, e in enumerate(entries):
            rid, k, n, g, d = e if self.identity else (pos,) + e
            rs = _Req(Request(rid, 0.0, k, n))
            rs.downloaded = g
            rs.started = g + d
            for c in range(d):
                st.threads[tid] = [rid, g + c, 0.0, 1.0, 0.0]
                rs.serving.add(tid)
                tid += 1
            st.active[rid] = rs
        st.arrived = arrived
        return st

    def _key(self, st):
        entries = []
        for rid, rs in st.active.items():
            e = (rs.req.k, rs.req.n, rs.downloaded, len(rs.serving))
            entries.append((rid,) + e if self.identity else e)
        return (st.arrived if self.identity else 0, tuple(entries))

    def _settle(self, st, trigger):
        if st.active:
            directives = self.policy.decide(st.snapshot(0.0), trigger)
            if directives:
                st.apply(directives, 0.0, self.policy.preemptive, lambda t: 1.0)
        # re-pack threads so that thread order follows request order
        return self.sid(self._key(st))

    def departure(self, s, m):
        st = self._build(self.keys[s])
        # canonical threads are packed: the m-th busy thread is thread m
        st.complete(m, 0.0)
        return self._settle(st, Trigger.COMPLETION)

    def arrival(self, s, codes):
        key = self.keys[s]
        st = self._build(key)
        nid = st.arrived if self.identity else len(st.active)
        for i, (n, k) in enumerate(codes):
            st.arrive(Request(nid + i, 0.0, k, n))
        if not self.identity:
            st.arrived = 0
        return self._settle(st, Trigger.START if key is _INIT else Trigger.ARRIVAL)


def _groups(times):
    """Split one sorted arrival vector into runs of equal times."""
    starts = [0]
    for i in range(1, len(times)):
        if times[i] != times[i - 1]:
            starts.append(i)
    return starts


def _layout(workload, reps, seed):
    """Arrival-group times ``(reps, G)`` and group-class ids ``(reps, G)``."""
    classes = []
    cindex = {}

    def cls(codes):
        c = cindex.get(codes)
        if c is None:
            c = cindex[codes] = len(classes)
            classes.append(codes)
        return c

    if workload.is_explicit:
        reqs = workload.requests
        times = [r.arrival for r in reqs]
        starts = _groups(times) + [len(reqs)]
        gt = [times[s] for s in starts[:-1]]
        gc = [cls(tuple((r.n, r.k) for r in reqs[a:b])) for a, b in zip(starts[:-1], starts[1:])]
        T = np.tile(np.array(gt, dtype=float), (reps, 1))
        C = np.tile(np.array(gc, dtype=np.int64), (reps, 1))
        return T, C, classes
    codes = workload.codes()
    for c in codes:
        cls((c,))
    base = Streams(seed)
    T = np.empty((reps, workload.N))
    C = np.empty((reps, workload.N), dtype=np.int64)
    for r in range(reps):
        T[r], C[r] = draw_arrays(workload, base.child(r))
    return T, C, classes


def markov_run(workload, cfg, reps, seed=0, record=0, stop_after=None, max_steps=10_000_000):
    """Simulate ``reps`` replications; return (flow-time sums, departure times).

    ``record`` > 0 keeps the first ``record`` departure instants per
    replication (NaN where fewer occurred).  With ``stop_after`` a replication
    halts after that many departures and its flow sum is left partial.
    """
    policy = cfg.policy
    if not policy.markov_safe or policy.bound_only:
        raise InvalidSpec(f"{policy.id} cannot run on the jump chain")
    mu = cfg.dist.rate
    L = cfg.L
    if workload.is_explicit:
        policy.check_workload(workload.requests, L)
    T, C, classes = _layout(workload, reps, seed)
    G = T.shape[1]
    chain = _Chain(policy, L)
    chain.ensure_classes(len(classes))
    gen = Streams(seed).get("markov")

    sid = np.zeros(reps, dtype=np.int64)
    now = np.zeros(reps)
    gptr = np.zeros(reps, dtype=np.int64)
    area = np.zeros(reps)
    ndep = np.zeros(reps, dtype=np.int64)
    D = np.full((reps, record), np.nan) if record else None
    live = np.arange(reps)
    Tpad = np.concatenate([T, np.full((reps, 1), np.inf)], axis=1)
    Cpad = np.concatenate([C, np.zeros((reps, 1), dtype=np.int64)], axis=1)
    steps = 0
    while live.size:
        steps += 1
        if steps > max_steps:
            raise EventCapExceeded(f"jump chain exceeded {max_steps} steps")
        s = sid[live]
        b = chain.busy[s]
        t = now[live]
        ta = Tpad[live, gptr[live]]
        e = gen.standard_exponential(live.size)
        with np.errstate(divide="ignore"):
            tc = t + e / (b * mu)
        stalled = (b == 0) & np.isinf(ta)
        if stalled.any():
            raise StalledSimulation("requests left with idle threads and no arrivals")
        is_dep = tc < ta
        tn = np.where(is_dep, tc, ta)
        area[live] += chain.nact[s] * (tn - t)
        now[live] = tn

        new = np.empty_like(s)
        di = np.nonzero(is_dep)[0]
        if di.size:
            u = gen.random(di.size)
            m = np.minimum((u * b[di]).astype(np.int64), b[di] - 1)
            sd = s[di]
            nxt = chain.dep[sd, m]
            miss = nxt < 0
            if miss.any():
                for a, bb in set(zip(sd[miss].tolist(), m[miss].tolist())):
                    chain.dep[a, bb] = chain.departure(a, bb)
                nxt = chain.dep[sd, m]
            new[di] = nxt
            rows = live[di]
            if record:
                k = ndep[rows]
                ok = k < record
                D[rows[ok], k[ok]] = tn[di][ok]
            ndep[rows] += 1
        ai = np.nonzero(~is_dep)[0]
        if ai.size:
            rows = live[ai]
            cl = Cpad[rows, gptr[rows]]
            sa = s[ai]
            nxt = chain.arr[sa, cl]
            miss = nxt < 0
            if miss.any():
                for a, c in set(zip(sa[miss].tolist(), cl[miss].tolist())):
                    chain.arr[a, c] = chain.arrival(a, classes[c])
                nxt = chain.arr[sa, cl]
            new[ai] = nxt
            gptr[rows] += 1
        sid[live] = new
        done = (gptr[live] >= G) & (chain.nact[new] == 0)
        if stop_after is not None:
            done |= ndep[live] >= stop_after
        live = live[~done]
    return area, D, len(chain.keys)


def markov_flow_times(workload, cfg, reps, seed=0):
    """Per-replication average flow times on the jump chain."""
    area, _, _ = markov_run(workload, cfg, reps, seed)
    return area / workload.N


def markov_departures(workload, cfg, reps, seed=0, J=20):
    """First ``J`` chunk-departure instants per replication, shape (reps, J)."""
    _, D, _ = markov_run(workload, cfg, reps, seed, record=J, stop_after=J)
    return D

