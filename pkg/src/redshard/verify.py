"""Sample-path checks of the state-dominance lemmas and stochastic orderings.

Two couplings drive a pair of policies from shared randomness:

* shared departure instants (:func:`coupled_departure_run`): one sequence of
  departure instants at rate ``max(busy) * mu``; at each instant a shared
  uniform ``u`` selects in-service chunk ``floor(u * max_busy)`` of each
  policy, and a policy with fewer busy threads than that index has no
  departure.  Each policy's marginal law is exact.
* per-thread tick streams (:func:`coupled_thread_stream_run`): every thread
  carries a Poisson(mu) clock.  A tick on thread l completes the chunk that a
  policy runs on thread l, and is dropped if that thread is idle.  The bound
  construction consumes every tick while it has work.

Histories record, after every event, the sorted remaining vector and the
sorted differential vector of both policies.  :func:`check_dominance` then
asserts the lemma inequalities exactly, in integers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .distributions import Exponential
from .engine import SimConfig, simulate
from .exceptions import DistMismatch, MisalignedHistories, PreconditionViolated
from .model import SystemState
from .policies import Trigger, make_policy
from .rng import Streams, as_generator
from .workload import Request, WorkloadSpec, min_code_distance, validate_requests


@dataclass
class Record:
    t: float
    rem_a: tuple
    diff_a: tuple
    rem_b: tuple
    diff_b: tuple
    dep_a: int
    dep_b: int


@dataclass
class CoupledHistories:
    L: int
    coupling: str
    policies: tuple
    records: list = field(default_factory=list)
    seed: object = None
    experimental: bool = False

    def times(self):
        return [r.t for r in self.records]


class _Virtual:
    """State of the bound construction under tick coupling."""

    def __init__(self, L):
        self.L = L
        self.remaining = {}
        self.arrival = {}

    def arrive(self, req):
        self.remaining[req.id] = req.k
        self.arrival[req.id] = req.arrival

    def tick(self, thread):
        if not self.remaining:
            return False
        rid = min(self.remaining, key=lambda i: (self.remaining[i], self.arrival[i], i))
        self.remaining[rid] -= 1
        if self.remaining[rid] == 0:
            del self.remaining[rid]
        return True

    def vectors(self):
        rem = tuple(sorted(self.remaining.values(), reverse=True))
        # every thread is busy with real or virtual chunks; delta is not defined
        return rem, rem

    def busy(self):
        return self.L if self.remaining else 0


class _Real:
    def __init__(self, policy, L):
        self.policy = policy
        self.state = SystemState(L)
        self.first = True

    def arrive(self, req):
        self.state.arrive(req)

    def settle(self, now, trigger):
        st = self.state
        if self.first:
            trigger = Trigger.START
            self.first = False
        if st.active:
            d = self.policy.decide(st.snapshot(now), trigger)
            if d:
                st.apply(d, now, self.policy.preemptive, lambda t: 1.0)

    def busy_threads(self):
        return [i for i, s in enumerate(self.state.threads) if s is not None]

    def complete(self, thread, now):
        if self.state.threads[thread] is None:
            return False
        self.state.complete(thread, now)
        return True

    def tick(self, thread, now):
        return self.complete(thread, now)

    def vectors(self):
        rem, diff = [], []
        for st in self.state.active.values():
            a = st.req.k - st.downloaded
            rem.append(a)
            diff.append(a - len(st.serving))
        rem.sort(reverse=True)
        diff.sort(reverse=True)
        return tuple(rem), tuple(diff)


def _side(policy, L):
    p = make_policy(policy)
    return _Virtual(L) if p.bound_only else _Real(p, L)


def _record(h, now, a, b, dep_a, dep_b):
    ra, da = a.vectors()
    rb, db = b.vectors()
    h.records.append(Record(now, ra, da, rb, db, dep_a, dep_b))


def _requests(workload):
    if isinstance(workload, WorkloadSpec):
        if not workload.is_explicit:
            raise ValueError("coupled runs need a concrete request list")
        return workload.requests
    return validate_requests(workload)


def _check_exp(dist):
    if isinstance(dist, Exponential):
        return dist.rate
    if isinstance(dist, (int, float)):
        return float(dist)
    raise DistMismatch(f"coupled runs need exponential downloading times, got {dist}")


def coupled_departure_run(policy_a, policy_b, workload, L, dist, rng=None):
    """Drive two policies with one sequence of departure instants."""
    mu = _check_exp(dist)
    reqs = _requests(workload)
    gen = as_generator(rng)
    a, b = _Real(make_policy(policy_a), L), _Real(make_policy(policy_b), L)
    h = CoupledHistories(L, "shared_departure_instants", (a.policy.id, b.policy.id), seed=_seed_of(rng))
    now = 0.0
    ai = 0
    N = len(reqs)
    dep_a = dep_b = 0
    while ai < N or a.state.active or b.state.active:
        ba, bb = a.busy_threads(), b.busy_threads()
        m = max(len(ba), len(bb))
        ta = reqs[ai].arrival if ai < N else math.inf
        tc = now + gen.standard_exponential() / (m * mu) if m else math.inf
        if ta == math.inf and tc == math.inf:
            raise PreconditionViolated("coupled run stalled")
        if ta <= tc:
            now = ta
            while ai < N and reqs[ai].arrival == now:
                a.arrive(reqs[ai])
                b.arrive(reqs[ai])
                ai += 1
            a.settle(now, Trigger.ARRIVAL)
            b.settle(now, Trigger.ARRIVAL)
        else:
            now = tc
            idx = min(int(gen.random() * m), m - 1)
            if idx < len(ba):
                a.complete(ba[idx], now)
                dep_a += 1
                a.settle(now, Trigger.COMPLETION)
            if idx < len(bb):
                b.complete(bb[idx], now)
                dep_b += 1
                b.settle(now, Trigger.COMPLETION)
        _record(h, now, a, b, dep_a, dep_b)
    return h


def coupled_thread_stream_run(policy_p, policy_q, workload, L, dist, rng=None, workload_q=None):
    """Drive two policies with per-thread Poisson tick streams.

    ``workload_q`` (same arrivals and k, possibly larger n) lets the second
    policy run on padded codes.  Pairs other than true/padded SERPT-R and
    SEDPT-NR/bound construction are flagged experimental.
    """
    mu = _check_exp(dist)
    reqs = _requests(workload)
    reqs_q = reqs if workload_q is None else _requests(workload_q)
    if [(r.arrival, r.k) for r in reqs] != [(r.arrival, r.k) for r in reqs_q]:
        raise MisalignedHistories("padded workload must keep arrivals and k")
    gen = as_generator(rng)
    p, q = _side(policy_p, L), _side(policy_q, L)
    ids = tuple(s.policy.id if isinstance(s, _Real) else "LOWER_BOUND_VIRTUAL" for s in (p, q))
    known = {
        ("SERPT_R_preemptive", "SERPT_R_preemptive"),
        ("SEDPT_NR_nonpreemptive", "LOWER_BOUND_VIRTUAL"),
    }
    h = CoupledHistories(L, "per_thread_streams", ids, seed=_seed_of(rng), experimental=ids not in known)
    now = 0.0
    ai = 0
    N = len(reqs)
    dep_p = dep_q = 0

    def has_work():
        return any(isinstance(s, _Real) and s.state.active or isinstance(s, _Virtual) and s.remaining for s in (p, q))

    while ai < N or has_work():
        ta = reqs[ai].arrival if ai < N else math.inf
        tc = now + gen.standard_exponential() / (L * mu) if has_work() else math.inf
        if ta <= tc:
            now = ta
            while ai < N and reqs[ai].arrival == now:
                p.arrive(reqs[ai])
                q.arrive(reqs_q[ai])
                ai += 1
            for s in (p, q):
                if isinstance(s, _Real):
                    s.settle(now, Trigger.ARRIVAL)
        else:
            now = tc
            thread = min(int(gen.random() * L), L - 1)
            for s in (p, q):
                hit = s.tick(thread, now) if isinstance(s, _Real) else s.tick(thread)
                if hit:
                    if s is p:
                        dep_p += 1
                    else:
                        dep_q += 1
                    if isinstance(s, _Real):
                        s.settle(now, Trigger.COMPLETION)
        _record(h, now, p, q, dep_p, dep_q)
    return h


def _seed_of(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return None


@dataclass
class DominanceResult:
    passed: bool
    mode: str
    checked: int
    violation: tuple | None = None  # (record index, t, j, lhs, rhs)
    seed: object = None

    def __bool__(self):
        return self.passed


def _tails(vec, upto):
    # tails[j-1] = sum_{i >= j} vec_i for j = 1..upto
    out = [0] * (upto + 1)
    acc = 0
    for j in range(upto, 0, -1):
        if j - 1 < len(vec):
            acc += vec[j - 1]
        out[j - 1] = acc
    return out


def _parse_mode(mode, c):
    m = re.fullmatch(r"remaining_offset\((-?\d+)\)", mode)
    if m:
        return "remaining_offset", int(m.group(1))
    if mode == "remaining_offset" and c is None:
        raise ValueError("remaining_offset needs an offset c")
    return mode, c


def check_dominance(h, mode, c=None):
    """Assert one dominance relation at every recorded event and every j."""
    mode, c = _parse_mode(mode, c)
    recs = h.records
    for idx in range(1, len(recs)):
        if recs[idx].t < recs[idx - 1].t:
            raise MisalignedHistories("history times are not nondecreasing")
    L = h.L
    for idx, r in enumerate(recs):
        if mode == "total_L_minus_1":
            lhs, rhs = sum(r.rem_a), sum(r.rem_b) + L - 1
            if lhs > rhs:
                return DominanceResult(False, mode, idx, (idx, r.t, 1, lhs, rhs), h.seed)
            continue
        upto = max(len(r.rem_a), len(r.rem_b), 1)
        if mode == "differential_vs_remaining":
            ta, tb, off = _tails(r.diff_a, upto), _tails(r.rem_b, upto), 0
        elif mode == "remaining_offset":
            ta, tb, off = _tails(r.rem_a, upto), _tails(r.rem_b, upto), c
        elif mode == "mixed_2L_minus_1":
            ta, tb = _tails(r.diff_a, upto), _tails(r.rem_b, upto)
            off = sum(r.rem_a) - sum(r.rem_b)
        else:
            raise ValueError(f"unknown dominance mode {mode!r}")
        for j in range(1, upto + 1):
            if ta[j - 1] > tb[j - 1] + off:
                return DominanceResult(False, mode, idx, (idx, r.t, j, ta[j - 1], tb[j - 1] + off), h.seed)
    return DominanceResult(True, mode, len(recs), None, h.seed)


def negative_control(mode, L=3):
    """A hand-built history that violates ``mode``; used to prove the check bites."""
    h = CoupledHistories(L, "fixture", ("fixture_a", "fixture_b"), seed="fixture")
    if mode == "differential_vs_remaining":
        h.records.append(Record(0.0, (2, 1), (2, 1), (2, 1), (2, 1), 0, 0))
        h.records.append(Record(1.0, (2, 1), (2, 1), (2,), (1,), 0, 1))
    elif mode.startswith("remaining_offset"):
        c = _parse_mode(mode, 0)[1]
        h.records.append(Record(0.0, (c + 1,), (c + 1,), (), (), 0, 1))
    elif mode == "total_L_minus_1":
        h.records.append(Record(0.0, (L,), (L,), (), (), 0, 1))
    elif mode == "mixed_2L_minus_1":
        h.records.append(Record(0.0, (1, 1), (1, 1), (3,), (3,), 0, 0))
    else:
        raise ValueError(f"unknown dominance mode {mode!r}")
    return h


def corrupt(h, at=None):
    """Copy of ``h`` whose reference side is emptied at one record where the
    candidate still has work, as a negative control on real runs."""
    recs = list(h.records)
    if at is None:
        at = max((i for i, r in enumerate(recs) if sum(r.rem_a) >= h.L), default=None, key=lambda i: sum(recs[i].rem_a))
        if at is None:
            raise ValueError("history never holds enough work to corrupt")
    r = recs[at]
    recs[at] = Record(r.t, r.rem_a, r.rem_a, (), (), r.dep_a, r.dep_b)
    return CoupledHistories(h.L, h.coupling, h.policies, recs, h.seed, h.experimental)


# stochastic ordering -------------------------------------------------------


@dataclass
class OrderResult:
    j: int
    passed: bool
    worst_margin: float  # max over x of P_a(t_j > x) - P_b(t_j > x) - slack
    reps: int


def departure_instants(policy, workload, L, dist, reps, seed=0, J=10):
    """(reps, J) array of the first J chunk-departure instants (event engine)."""
    cfg = SimConfig(L, dist, policy)
    base = Streams(seed)
    out = np.full((reps, J), np.inf)
    for r in range(reps):
        tr = simulate(workload, cfg, base.child(r), stop_after=J)
        d = tr.chunk_departures[:J]
        out[r, : len(d)] = d
    return out


def empirical_stochastic_order(policy_a, policy_b, workload, dist, L, reps, j_set, seed=0, grid=50):
    """One-sided tail comparison of t_j between two policies, per j.

    Passes at j if P_a(t_j > x) <= P_b(t_j > x) + 3 * binomial SE at each of
    ``grid`` pooled-quantile points x.  Both policies use the same seeds.
    """
    js = sorted(set(j_set))
    J = js[-1]
    A = departure_instants(policy_a, workload, L, dist, reps, seed, J)
    B = A if make_policy(policy_a).id == make_policy(policy_b).id else departure_instants(
        policy_b, workload, L, dist, reps, seed, J
    )
    out = []
    for j in js:
        a, b = A[:, j - 1], B[:, j - 1]
        pooled = np.concatenate([a, b])
        pooled = pooled[np.isfinite(pooled)]
        xs = np.quantile(pooled, (np.arange(grid) + 0.5) / grid)
        pa = (a[None, :] > xs[:, None]).mean(axis=1)
        pb = (b[None, :] > xs[:, None]).mean(axis=1)
        slack = 3.0 * np.sqrt(pa * (1 - pa) / reps + pb * (1 - pb) / reps)
        margin = pa - pb - slack
        out.append(OrderResult(j, bool((margin <= 0).all()), float(margin.max()), reps))
    return out


# departure-process invariance ---------------------------------------------


@dataclass
class InvarianceResult:
    passed: bool
    J: int
    means: dict
    std_errs: dict
    worst: tuple | None  # (policy a, policy b, j, |diff| / pooled se)


def _codes(workload):
    if workload.is_explicit:
        return [(r.n, r.k) for r in workload.requests]
    return list(workload.codes())


def check_departure_invariance(policies, workload, L, dist, reps, seed=0, J=20, method="auto"):
    """Mean chunk-departure instants t_1..t_J must agree across policies.

    Requires exponential downloading times, d_min >= L and work-conserving
    policies.  All policies share the replication seeds, so with the jump
    chain the departure sequences coincide exactly when the invariance holds.
    """
    _check_exp(dist)
    pols = [make_policy(p) for p in policies]
    bad = [p.id for p in pols if not p.work_conserving or p.bound_only]
    if bad:
        raise PreconditionViolated(f"not work-conserving: {bad}")
    if not isinstance(workload, WorkloadSpec):
        workload = WorkloadSpec.explicit(workload)
    codes = _codes(workload)
    dmin = min(n - k + 1 for n, k in codes)
    if dmin < L:
        raise PreconditionViolated(f"d_min={dmin} < L={L}")
    total = workload.N * min(k for _, k in codes)
    J = min(J, total)
    means, ses = {}, {}
    for p in pols:
        cfg = SimConfig(L, dist, p)
        if method == "markov" or (method == "auto" and p.markov_safe and workload.N <= 64):
            from ._markov import markov_departures

            D = markov_departures(workload, cfg, reps, seed, J)
        else:
            D = departure_instants(p, workload, L, dist, reps, seed, J)
        means[p.id] = D.mean(axis=0)
        ses[p.id] = D.std(axis=0, ddof=1) / math.sqrt(reps)
    worst = None
    ok = True
    ids = list(means)
    for i in range(len(ids)):
        for k in range(i + 1, len(ids)):
            a, b = ids[i], ids[k]
            diff = np.abs(means[a] - means[b])
            se = np.sqrt(ses[a] ** 2 + ses[b] ** 2)
            z = np.divide(diff, se, out=np.where(diff > 0, np.inf, 0.0), where=se > 0)
            jw = int(np.argmax(z))
            if worst is None or z[jw] > worst[3]:
                worst = (a, b, jw + 1, float(z[jw]))
            if (diff > 3.0 * se).any():
                ok = False
    return InvarianceResult(ok, J, means, ses, worst)


# random workloads for the lemma suites ---------------------------------------


def random_workload(rng, N_max=50, L=3, d_min_at_least=None, d_min_below=None, k_max=4, spread=1.0):
    """Random explicit workload with integer-free arrival gaps.

    ``d_min_at_least`` forces every distance >= that value; ``d_min_below``
    forces at least one distance below it.
    """
    gen = as_generator(rng)
    N = int(gen.integers(1, N_max + 1))
    gaps = gen.exponential(spread, N - 1) * (gen.random(N - 1) < 0.7)
    arrivals = np.concatenate(([0.0], np.cumsum(gaps)))
    reqs = []
    for i in range(N):
        k = int(gen.integers(1, k_max + 1))
        lo = d_min_at_least if d_min_at_least else 1
        d = int(gen.integers(lo, lo + L + 1))
        reqs.append(Request(i, float(arrivals[i]), k, k + d - 1))
    if d_min_below is not None and min_code_distance(reqs) >= d_min_below:
        i = int(gen.integers(0, N))
        r = reqs[i]
        d = int(gen.integers(1, d_min_below))
        reqs[i] = Request(i, r.arrival, r.k, r.k + d - 1)
    return tuple(reqs)


__all__ = [
    "CoupledHistories",
    "DominanceResult",
    "check_departure_invariance",
    "check_dominance",
    "corrupt",
    "coupled_departure_run",
    "coupled_thread_stream_run",
    "departure_instants",
    "empirical_stochastic_order",
    "negative_control",
    "random_workload",
]
