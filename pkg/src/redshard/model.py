"""Runtime state of the proxy: request progress and thread occupancy.

:class:`SystemState` is the single mutable object an engine owns.  Policies
only ever see :class:`Snapshot` values, which are immutable.
"""

from __future__ import annotations

import json
from typing import NamedTuple

from .exceptions import IllegalDirective


class Assign(NamedTuple):
    """Put idle ``thread`` on ``request``; ``chunk=None`` starts a fresh chunk,
    otherwise the paused chunk with that id is resumed."""

    thread: int
    request: int
    chunk: int | None = None


class Preempt(NamedTuple):
    thread: int


class RequestView(NamedTuple):
    id: int
    arrival: float
    k: int
    n: int
    downloaded: int
    in_service: int
    paused: tuple  # ((chunk id, elapsed seconds), ...) most elapsed first
    fresh: int

    @property
    def remaining(self):
        return self.k - self.downloaded

    @property
    def available(self):
        """Chunks that an idle thread could start or resume now."""
        return self.fresh + len(self.paused)

    @property
    def distance(self):
        return self.n - self.k + 1


class ThreadView(NamedTuple):
    id: int
    request: int | None
    chunk: int | None
    start: float | None
    elapsed: float

    @property
    def idle(self):
        return self.request is None


class Snapshot(NamedTuple):
    now: float
    requests: tuple  # unfinished requests in arrival order
    threads: tuple
    arrived: int = 0

    @property
    def L(self):
        return len(self.threads)

    @property
    def assigned_counts(self):
        return {r.id: r.in_service for r in self.requests}

    def idle_threads(self):
        return [t.id for t in self.threads if t.request is None]

    def digest(self):
        return {
            "t": self.now,
            "req": [[r.id, r.downloaded, r.in_service, len(r.paused)] for r in self.requests],
            "thr": [t.request for t in self.threads],
        }


def state_vector(snap, kind="remaining"):
    """Sorted (descending) alpha, or alpha - delta, over unfinished requests."""
    if kind == "remaining":
        vals = [r.k - r.downloaded for r in snap.requests]
    elif kind == "differential":
        vals = [r.k - r.downloaded - r.in_service for r in snap.requests]
    else:
        raise ValueError(f"unknown state vector kind {kind!r}")
    vals.sort(reverse=True)
    return tuple(vals)


def tail_sum(vec, j):
    """sum_{i >= j} vec_i with 1-based j; zero beyond the end."""
    if j < 1:
        raise ValueError("j must be >= 1")
    return sum(vec[j - 1 :])


def remaining_total(snap):
    return sum(r.k - r.downloaded for r in snap.requests)


class _Req:
    __slots__ = ("req", "downloaded", "serving", "paused", "started")

    def __init__(self, req):
        self.req = req
        self.downloaded = 0
        self.serving = set()
        self.paused = {}  # chunk -> (elapsed, requirement)
        self.started = 0


class SystemState:
    """Mutable request/thread bookkeeping shared by the event engines."""

    def __init__(self, L):
        if L < 1:
            raise ValueError("L must be >= 1")
        self.L = L
        self.active = {}
        # per thread: None or [request id, chunk, start, requirement, elapsed before start]
        self.threads = [None] * L
        self.gen = [0] * L
        self.completion = {}
        self.arrived = 0
        self.downloaded = 0
        self.preempted = 0
        self.terminated = 0

    def arrive(self, req):
        self.active[req.id] = _Req(req)
        self.arrived += 1

    def busy(self):
        return sum(1 for s in self.threads if s is not None)

    def complete(self, thread, now):
        """Chunk on ``thread`` finished.  Returns (request id, request done?)."""
        slot = self.threads[thread]
        rid = slot[0]
        st = self.active[rid]
        st.downloaded += 1
        st.serving.discard(thread)
        self.threads[thread] = None
        self.gen[thread] += 1
        self.downloaded += 1
        if st.downloaded < st.req.k:
            return rid, False
        # service termination of the leftover redundant downloads
        for t in st.serving:
            self.threads[t] = None
            self.gen[t] += 1
            self.terminated += 1
        del self.active[rid]
        self.completion[rid] = now
        return rid, True

    def apply(self, directives, now, allow_preempt, draw):
        """Apply a policy batch in order.

        ``draw(thread)`` returns the downloading requirement of a fresh chunk.
        Returns the completions to schedule as ``(finish time, thread, gen)``.
        """
        scheduled = []
        threads = self.threads
        for d in directives:
            if type(d) is Preempt:
                if not allow_preempt:
                    raise IllegalDirective(f"preemption by a non-preemptive policy: {d}")
                slot = threads[d.thread] if 0 <= d.thread < self.L else None
                if slot is None:
                    raise IllegalDirective(f"preempting idle or unknown thread: {d}")
                rid, chunk, start, requirement, prior = slot
                st = self.active[rid]
                st.paused[chunk] = (prior + (now - start), requirement)
                st.serving.discard(d.thread)
                threads[d.thread] = None
                self.gen[d.thread] += 1
                self.preempted += 1
                continue
            t = d.thread
            if not 0 <= t < self.L or threads[t] is not None:
                raise IllegalDirective(f"assigning busy or unknown thread: {d}")
            st = self.active.get(d.request)
            if st is None:
                raise IllegalDirective(f"assigning to finished or unknown request: {d}")
            if d.chunk is None:
                if st.started >= st.req.n:
                    raise IllegalDirective(f"request {d.request} has no fresh chunk left: {d}")
                chunk = st.started
                st.started += 1
                requirement = draw(t)
                prior = 0.0
            else:
                if d.chunk not in st.paused:
                    raise IllegalDirective(f"chunk {d.chunk} of request {d.request} is not paused: {d}")
                chunk = d.chunk
                prior, requirement = st.paused.pop(chunk)
            threads[t] = [d.request, chunk, now, requirement, prior]
            st.serving.add(t)
            scheduled.append((now + (requirement - prior), t, self.gen[t]))
        return scheduled

    def snapshot(self, now):
        reqs = []
        for rid, st in self.active.items():
            r = st.req
            paused = tuple(sorted(((c, e) for c, (e, _) in st.paused.items()), key=lambda x: (-x[1], x[0])))
            reqs.append(
                RequestView(rid, r.arrival, r.k, r.n, st.downloaded, len(st.serving), paused, r.n - st.started)
            )
        thr = []
        for i, s in enumerate(self.threads):
            if s is None:
                thr.append(ThreadView(i, None, None, None, 0.0))
            else:
                thr.append(ThreadView(i, s[0], s[1], s[2], s[4] + (now - s[2])))
        return Snapshot(now, tuple(reqs), tuple(thr), self.arrived)

    def check_invariants(self):
        busy = 0
        for i, s in enumerate(self.threads):
            if s is None:
                continue
            busy += 1
            st = self.active.get(s[0])
            if st is None or i not in st.serving:
                raise AssertionError(f"thread {i} serves finished or inconsistent request {s[0]}")
        if busy > self.L or busy != sum(len(st.serving) for st in self.active.values()):
            raise AssertionError("sum of assigned counts differs from busy threads")
        for rid, st in self.active.items():
            r = st.req
            if not 0 <= st.downloaded < r.k:
                raise AssertionError(f"request {rid}: downloaded {st.downloaded} out of range")
            fresh = r.n - st.started
            if fresh < 0 or st.downloaded + len(st.serving) + len(st.paused) + fresh > r.n:
                raise AssertionError(f"request {rid}: more chunks than stored")


def dump_snapshots(snaps, fh):
    """Write one JSON digest per snapshot (JSON lines)."""
    for s in snaps:
        fh.write(json.dumps(s.digest() if isinstance(s, Snapshot) else s, separators=(",", ":")))
        fh.write("\n")
