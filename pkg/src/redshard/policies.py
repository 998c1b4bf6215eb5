"""Thread-scheduling policy catalog.

A policy maps ``(snapshot, trigger)`` to a batch of :class:`~redshard.model.Assign`
and :class:`~redshard.model.Preempt` directives.  All catalog policies are
deterministic functions of their inputs.

Ordering keys: ``alpha`` is a request's remaining chunk count, ``delta`` the
number of threads currently serving it.  Ties are broken by arrival time and
then by request id.
"""

from __future__ import annotations

import math
import random
import zlib
from dataclasses import dataclass, field
from enum import Enum

from .exceptions import InvalidSpec, WrongWorkload
from .model import Assign, Preempt


class Trigger(str, Enum):
    START = "start"
    ARRIVAL = "arrival"
    COMPLETION = "completion"


def _queue_chunks(r):
    # paused chunks (most elapsed first) before fresh ones
    return [c for c, _ in r.paused] + [None] * r.fresh


def _assign(r, m, idle, out):
    for c in _queue_chunks(r)[:m]:
        out.append(Assign(idle.pop(0), r.id, c))


def _fill_idle(snap, order, cap, out=None, idle=None):
    """Give idle threads (ascending id) to requests in ``order``, at most
    ``cap(r)`` each.  Returns (directives, extra threads per request)."""
    out = [] if out is None else out
    idle = snap.idle_threads() if idle is None else idle
    extra = {}
    for r in order:
        if not idle:
            break
        m = min(cap(r), r.available, len(idle))
        if m > 0:
            extra[r.id] = m
            _assign(r, m, idle, out)
    return out, extra


def _realize(snap, order, target):
    """Preemptive realisation of per-request thread targets with minimal churn."""
    out = []
    by_req = {}
    for t in snap.threads:
        if t.request is not None:
            by_req.setdefault(t.request, []).append(t)
    freed = []
    for r in snap.requests:
        surplus = r.in_service - target.get(r.id, 0)
        if surplus > 0:
            # most recently started first, higher thread id on ties
            victims = sorted(by_req[r.id], key=lambda t: (-t.start, -t.id))[:surplus]
            for t in victims:
                out.append(Preempt(t.id))
                freed.append(t.id)
    idle = sorted(snap.idle_threads() + freed)
    for r in order:
        need = target.get(r.id, 0) - r.in_service
        if need > 0:
            if need > r.available or need > len(idle):
                raise AssertionError(f"target for request {r.id} not realisable")
            _assign(r, need, idle, out)
    return out


class Policy:
    """Base class.  Subclasses implement :meth:`decide`."""

    id = "base"
    preemptive = False
    work_conserving = True
    bound_only = False
    markov_safe = True
    uses_identity = False

    def __init__(self, **params):
        if params:
            raise InvalidSpec(f"{self.id} takes no parameters, got {sorted(params)}")
        self.params = {}

    def decide(self, snap, trigger):
        raise NotImplementedError

    def check_workload(self, requests, L):
        pass

    def __repr__(self):
        return f"{type(self).__name__}({self.id})"


def _srpt_key(r):
    return (r.k - r.downloaded, r.arrival, r.id)


def _diff_key(r):
    return (r.k - r.downloaded - r.in_service, r.arrival, r.id)


def _fcfs_key(r):
    return (r.arrival, r.id)


class SerptR(Policy):
    """Fewest remaining chunks first, with redundant threads."""

    def __init__(self, preemptive=True):
        self.preemptive = bool(preemptive)
        self.id = "SERPT_R_preemptive" if self.preemptive else "SERPT_R_nonpreemptive"
        self.params = {}

    def decide(self, snap, trigger):
        order = sorted(snap.requests, key=_srpt_key)
        if not self.preemptive:
            return _fill_idle(snap, order, lambda r: r.available)[0]
        budget = snap.L
        target = {}
        for r in order:
            if budget == 0:
                break
            m = min(budget, r.in_service + r.available)
            target[r.id] = m
            budget -= m
        return _realize(snap, order, target)


class SedptR(Policy):
    id = "SEDPT_R_nonpreemptive"

    def decide(self, snap, trigger):
        order = sorted(snap.requests, key=_diff_key)
        return _fill_idle(snap, order, lambda r: r.available)[0]


class SedptNR(Policy):
    id = "SEDPT_NR_nonpreemptive"
    work_conserving = False

    def decide(self, snap, trigger):
        order = sorted(snap.requests, key=_diff_key)
        return _fill_idle(snap, order, lambda r: r.k - r.downloaded - r.in_service)[0]


class FcfsR(Policy):
    id = "FCFS_R"

    def decide(self, snap, trigger):
        return _fill_idle(snap, sorted(snap.requests, key=_fcfs_key), lambda r: r.available)[0]


class _WorkConservingRedundant(Policy):
    """Non-redundant fill first, then redundant chunks for leftover threads.

    When preemptive, arrivals (and the start) pull threads off redundant
    chunks before the fill is recomputed.
    """

    fcfs = False

    def __init__(self, preemptive=True):
        self.preemptive = bool(preemptive)
        self.params = {}

    def _nr_order(self, reqs, locked):
        if self.fcfs:
            return sorted(reqs, key=_fcfs_key)
        return sorted(reqs, key=lambda r: (r.k - r.downloaded - locked[r.id], r.arrival, r.id))

    def decide(self, snap, trigger):
        if self.preemptive and trigger != Trigger.COMPLETION:
            return self._rebalance(snap)
        delta = {r.id: r.in_service for r in snap.requests}
        order = self._nr_order(snap.requests, delta)
        out, extra = _fill_idle(snap, order, lambda r: r.k - r.downloaded - r.in_service)
        for rid, m in extra.items():
            delta[rid] += m
        views = [r._replace(in_service=delta[r.id]) for r in snap.requests]
        # remove chunks already handed out in the first pass
        used = {}
        for d in out:
            used.setdefault(d.request, []).append(d.chunk)
        views = [_consume(v, used.get(v.id, ())) for v in views]
        order = self._nr_order(views, delta)
        idle = [t for t in snap.idle_threads() if t not in {d.thread for d in out}]
        _fill_idle(snap, order, lambda r: r.available, out, idle)
        return out

    def _rebalance(self, snap):
        locked = {r.id: min(r.in_service, r.k - r.downloaded) for r in snap.requests}
        pool = snap.L - sum(locked.values())
        target = dict(locked)
        for r in self._nr_order(snap.requests, locked):
            if pool == 0:
                break
            m = min(pool, r.k - r.downloaded - locked[r.id])
            if m > 0:
                target[r.id] += m
                pool -= m
        order2 = self._nr_order(snap.requests, target)
        for r in order2:
            if pool == 0:
                break
            m = min(pool, r.in_service + r.available - target[r.id])
            if m > 0:
                target[r.id] += m
                pool -= m
        return _realize(snap, order2, target)


def _consume(view, chunks):
    if not chunks:
        return view
    taken = set(c for c in chunks if c is not None)
    paused = tuple(p for p in view.paused if p[0] not in taken)
    fresh = view.fresh - sum(1 for c in chunks if c is None)
    return view._replace(paused=paused, fresh=fresh)


class SedptWCR(_WorkConservingRedundant):
    def __init__(self, preemptive=True):
        super().__init__(preemptive)
        self.id = "SEDPT_WCR_preemptive" if self.preemptive else "SEDPT_WCR_nonpreemptive"


class FcfsWCR(_WorkConservingRedundant):
    fcfs = True

    def __init__(self, preemptive=True):
        super().__init__(preemptive)
        self.id = "FCFS_WCR" if self.preemptive else "FCFS_WCR_nonpreemptive"


class ForcedSwitch(Policy):
    """Adversary: preempt everything at every event, refill in FCFS order up
    to alpha threads per request, starting fresh chunks before resuming."""

    id = "ADV_FORCED_SWITCH"
    preemptive = True
    work_conserving = False

    def decide(self, snap, trigger):
        out = [Preempt(t.id) for t in snap.threads if t.request is not None]
        idle = list(range(snap.L))
        for r in sorted(snap.requests, key=_fcfs_key):
            if not idle:
                break
            # every chunk that was in service is now paused
            paused = tuple(r.paused) + tuple((t.chunk, t.elapsed) for t in snap.threads if t.request == r.id)
            avail = r.fresh + len(paused)
            m = min(r.k - r.downloaded, avail, len(idle))
            chunks = [None] * r.fresh + [c for c, _ in sorted(paused, key=lambda p: (-p[1], p[0]))]
            for c in chunks[:m]:
                out.append(Assign(idle.pop(0), r.id, c))
        return out


class RandomAssign(Policy):
    """Adversary: each idle thread picks a uniformly random request that still
    has an available chunk.  Non-preemptive and not work-conserving-optimal."""

    id = "ADV_RANDOM"
    markov_safe = False

    def __init__(self, seed=0):
        self.params = {"seed": int(seed)}

    def decide(self, snap, trigger):
        key = repr((self.params["seed"], snap.now, [(r.id, r.downloaded, r.in_service) for r in snap.requests]))
        rng = random.Random(zlib.crc32(key.encode()))
        out = []
        avail = {r.id: _queue_chunks(r) for r in snap.requests}
        for t in snap.idle_threads():
            choices = [rid for rid, ch in avail.items() if ch]
            if not choices:
                break
            rid = rng.choice(choices)
            out.append(Assign(t, rid, avail[rid].pop(0)))
        return out


class LowerBoundVirtual(Policy):
    """Infeasible bound construction, simulated by the engine itself.

    While any chunk remains, all L threads download (padding with virtual
    chunks), and every departure is credited to the unfinished request with
    the fewest remaining chunks.
    """

    id = "LOWER_BOUND_VIRTUAL"
    bound_only = True
    markov_safe = False
    preemptive = True

    def decide(self, snap, trigger):
        raise InvalidSpec("LOWER_BOUND_VIRTUAL is a bound construction and is simulated directly")


class ScriptQ1(Policy):
    """Hand-built policy for the two-request example with L = 4:
    request 0 is (k=1, n=4), request 1 is (k=2, n=2), both at time 0."""

    id = "SCRIPT_Q1"
    preemptive = True
    work_conserving = False
    uses_identity = True

    def check_workload(self, requests, L):
        shape = [(r.arrival, r.k, r.n) for r in requests]
        if L != 4 or shape != [(0.0, 1, 4), (0.0, 2, 2)]:
            raise WrongWorkload("SCRIPT_Q1 needs L=4 and requests (k=1,n=4), (k=2,n=2) at time 0")

    def decide(self, snap, trigger):
        reqs = {r.id: r for r in snap.requests}
        if len(reqs) == 2:
            r1 = reqs[1]
            target = {0: 2, 1: 2} if r1.downloaded == 0 else {0: 3, 1: 1}
        else:
            target = {r.id: min(snap.L, r.in_service + r.available) for r in snap.requests}
        order = sorted(snap.requests, key=lambda r: r.id)
        return _realize(snap, order, target)


class ScriptQ2(Policy):
    """Hand-built non-preemptive policy for the example with L = 2:
    request 0 is (k=2, n=3) at 0 and request 1 is (k=1, n=2) at epsilon.
    Threads idle until request 1 arrives, serve it, then serve request 0."""

    id = "SCRIPT_Q2"
    work_conserving = False
    uses_identity = True

    def __init__(self, epsilon=0.01):
        if not epsilon > 0:
            raise InvalidSpec("epsilon must be positive")
        self.params = {"epsilon": float(epsilon)}

    def check_workload(self, requests, L):
        shape = [(r.k, r.n) for r in requests]
        eps = self.params["epsilon"]
        if L != 2 or shape != [(2, 3), (1, 2)] or requests[0].arrival != 0:
            raise WrongWorkload("SCRIPT_Q2 needs L=2 and requests (k=2,n=3) at 0, (k=1,n=2) at epsilon")
        if not math.isclose(requests[1].arrival, eps, rel_tol=1e-12, abs_tol=1e-15):
            raise WrongWorkload(f"second arrival {requests[1].arrival} does not match epsilon={eps}")

    def decide(self, snap, trigger):
        if snap.arrived < 2:
            return []
        order = sorted(snap.requests, key=lambda r: -r.id)
        return _fill_idle(snap, order, lambda r: r.available)[0]


_FACTORIES = {
    "SERPT_R_preemptive": lambda **p: SerptR(preemptive=True, **p),
    "SERPT_R_nonpreemptive": lambda **p: SerptR(preemptive=False, **p),
    "SEDPT_R_nonpreemptive": SedptR,
    "SEDPT_NR_nonpreemptive": SedptNR,
    "SEDPT_WCR_preemptive": lambda **p: SedptWCR(preemptive=True, **p),
    "SEDPT_WCR_nonpreemptive": lambda **p: SedptWCR(preemptive=False, **p),
    "FCFS_R": FcfsR,
    "FCFS_WCR": lambda **p: FcfsWCR(preemptive=True, **p),
    "FCFS_WCR_nonpreemptive": lambda **p: FcfsWCR(preemptive=False, **p),
    "LOWER_BOUND_VIRTUAL": LowerBoundVirtual,
    "SCRIPT_Q1": ScriptQ1,
    "SCRIPT_Q2": ScriptQ2,
    "ADV_FORCED_SWITCH": ForcedSwitch,
    "ADV_RANDOM": RandomAssign,
}

ALIASES = {
    "SERPT_R": "SERPT_R_preemptive",
    "SEDPT_R": "SEDPT_R_nonpreemptive",
    "SEDPT_NR": "SEDPT_NR_nonpreemptive",
    "SEDPT_WCR": "SEDPT_WCR_preemptive",
}

POLICY_IDS = tuple(_FACTORIES)


def canonical_id(pid):
    pid = ALIASES.get(pid, pid)
    if pid not in _FACTORIES:
        raise InvalidSpec(f"unknown policy id {pid!r}")
    return pid


@dataclass(frozen=True)
class PolicySpec:
    id: str
    params: dict = field(default_factory=dict)

    def build(self):
        return make_policy(self.id, **self.params)


def make_policy(pid, **params):
    if isinstance(pid, Policy):
        return pid
    if isinstance(pid, PolicySpec):
        return pid.build()
    try:
        return _FACTORIES[canonical_id(pid)](**params)
    except TypeError as exc:
        raise InvalidSpec(f"bad parameters for {pid}: {exc}") from None


def decide(policy, snap, trigger):
    return make_policy(policy).decide(snap, Trigger(trigger))
