"""Request sequences and workload-level quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import expected_extreme
from .exceptions import EmptyWorkload, InvalidSpec
from .rng import Streams


@dataclass(frozen=True)
class Request:
    id: int
    arrival: float
    k: int
    n: int

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and isinstance(self.n, (int, np.integer))):
            raise InvalidSpec(f"request {self.id}: k and n must be integers")
        if not 1 <= self.k <= self.n:
            raise InvalidSpec(f"request {self.id}: need n >= k >= 1, got (n={self.n}, k={self.k})")
        if not (self.arrival >= 0 and math.isfinite(self.arrival)):
            raise InvalidSpec(f"request {self.id}: bad arrival {self.arrival!r}")

    @property
    def distance(self):
        return self.n - self.k + 1


def validate_requests(requests):
    """Check ids 0..N-1, sorted arrivals and a_1 = 0; return a tuple."""
    reqs = tuple(requests)
    if not reqs:
        raise EmptyWorkload("workload has no requests")
    if reqs[0].arrival != 0:
        raise InvalidSpec("first arrival must be at time 0")
    for i, r in enumerate(reqs):
        if r.id != i:
            raise InvalidSpec(f"request ids must be 0..N-1 in order, got {r.id} at position {i}")
        if i and r.arrival < reqs[i - 1].arrival:
            raise InvalidSpec("arrivals must be nondecreasing")
    return reqs


@dataclass
class WorkloadSpec:
    """Either an explicit request list or a stochastic generator description.

    ``arrival_mixture`` is a list of ``(probability, rate multiple of lambda)``
    and ``code_mix`` a list of ``(probability, (n, k))``.
    """

    mode: str = "stochastic"
    requests: tuple = ()
    N: int = 1
    lam: float = 1.0
    arrival_mixture: tuple = ((1.0, 1.0),)
    code_mix: tuple = ((1.0, (3, 1)),)
    _codes: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        if self.mode == "explicit":
            self.requests = validate_requests(self.requests)
            self.N = len(self.requests)
            return
        if self.mode != "stochastic":
            raise InvalidSpec(f"unknown workload mode {self.mode!r}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidSpec(f"N must be a positive integer, got {self.N!r}")
        self.N = int(self.N)
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise InvalidSpec(f"lambda must be finite and >= 0, got {self.lam!r}")
        self.arrival_mixture = tuple((float(p), float(m)) for p, m in self.arrival_mixture)
        self.code_mix = tuple((float(p), (int(c[0]), int(c[1]))) for p, c in self.code_mix)
        for what, mix in (("arrival_mixture", self.arrival_mixture), ("code_mix", self.code_mix)):
            ps = [p for p, _ in mix]
            if not ps or any(p <= 0 for p in ps) or abs(math.fsum(ps) - 1.0) > 1e-12:
                raise InvalidSpec(f"{what} probabilities must be positive and sum to 1")
        if any(m <= 0 for _, m in self.arrival_mixture):
            raise InvalidSpec("arrival_mixture rate multiples must be positive")
        for _, (n, k) in self.code_mix:
            if not 1 <= k <= n:
                raise InvalidSpec(f"code (n={n}, k={k}) needs n >= k >= 1")

    @classmethod
    def explicit(cls, requests):
        return cls(mode="explicit", requests=tuple(requests))

    @property
    def is_explicit(self):
        return self.mode == "explicit"

    def with_lambda(self, lam):
        if self.is_explicit:
            return self
        return WorkloadSpec("stochastic", (), self.N, lam, self.arrival_mixture, self.code_mix)

    def with_N(self, N):
        if self.is_explicit:
            return self
        return WorkloadSpec("stochastic", (), N, self.lam, self.arrival_mixture, self.code_mix)

    def mean_k(self):
        if self.is_explicit:
            return sum(r.k for r in self.requests) / len(self.requests)
        return math.fsum(p * k for p, (n, k) in self.code_mix)

    def mean_interarrival(self):
        """Mean gap between consecutive stochastic arrivals."""
        if self.lam == 0:
            return math.inf
        return math.fsum(p / (m * self.lam) for p, m in self.arrival_mixture)

    def codes(self):
        """Distinct (n, k) pairs that can appear."""
        if self.is_explicit:
            return tuple(sorted({(r.n, r.k) for r in self.requests}))
        return tuple(c for _, c in self.code_mix)

    def to_config(self):
        if self.is_explicit:
            return {
                "mode": "explicit",
                "requests": [{"arrival": r.arrival, "n": r.n, "k": r.k} for r in self.requests],
            }
        return {
            "mode": "stochastic",
            "N": self.N,
            "lambda": self.lam,
            "arrival_mixture": [list(x) for x in self.arrival_mixture],
            "code_mix": [[p, list(c)] for p, c in self.code_mix],
        }


def parse_workload(cfg):
    try:
        mode = cfg.get("mode", "stochastic")
        if mode == "explicit":
            reqs = [
                Request(i, float(r["arrival"]), int(r["k"]), int(r["n"])) for i, r in enumerate(cfg["requests"])
            ]
            return WorkloadSpec.explicit(reqs)
        return WorkloadSpec(
            mode=mode,
            N=cfg["N"],
            lam=float(cfg.get("lambda", 1.0)),
            arrival_mixture=tuple(tuple(x) for x in cfg.get("arrival_mixture", [[1.0, 1.0]])),
            code_mix=tuple((p, tuple(c)) for p, c in cfg["code_mix"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidSpec):
            raise
        raise InvalidSpec(f"bad workload config: {exc}") from None


def _pick(probs, u):
    cum = np.cumsum(probs)
    return np.minimum(np.searchsorted(cum, u, side="right"), len(probs) - 1)


def draw_arrays(spec, streams, count=None):
    """Arrival times and code indices for one stochastic realisation.

    Returns ``(arrivals, code_idx)`` as numpy arrays; ``code_idx`` indexes
    ``spec.codes()``.  Gaps come from stream ``"arrivals"``, codes from
    ``"code_mix"``, so the two are independent of each other.
    """
    N = spec.N if count is None else count
    ga = streams.get("arrivals")
    gc = streams.get("code_mix")
    if N > 1:
        if spec.lam == 0:
            raise InvalidSpec("lambda = 0 gives no arrivals after the first")
        probs = [p for p, _ in spec.arrival_mixture]
        mults = np.array([m for _, m in spec.arrival_mixture])
        which = _pick(probs, ga.random(N - 1))
        gaps = ga.standard_exponential(N - 1) / (mults[which] * spec.lam)
        arrivals = np.concatenate(([0.0], np.cumsum(gaps)))
    else:
        arrivals = np.zeros(1)
    code_idx = _pick([p for p, _ in spec.code_mix], gc.random(N))
    return arrivals, code_idx


def generate_requests(spec, rng=0):
    """Materialise the requests of ``spec``.

    ``rng`` is a :class:`Streams` or an integer seed.  Explicit specs are
    returned verbatim.
    """
    if spec.is_explicit:
        return spec.requests
    streams = rng if isinstance(rng, Streams) else Streams(int(rng))
    arrivals, code_idx = draw_arrays(spec, streams)
    codes = spec.codes()
    return tuple(
        Request(i, float(a), codes[c][1], codes[c][0]) for i, (a, c) in enumerate(zip(arrivals, code_idx))
    )


def min_code_distance(requests):
    reqs = list(requests)
    if not reqs:
        raise EmptyWorkload("d_min of an empty workload")
    return min(r.distance for r in reqs)


def traffic_intensity(spec, L, dist, variant="chunk_rate", lam=None):
    """Offered load rho of ``spec`` on L threads.

    ``chunk_rate``: E[k] * lambda / (L * mu_eff), with 1/mu_eff the mean
    downloading time.  ``min_based``: lambda * E[min of L downloading times].
    """
    if L < 1:
        raise InvalidSpec("L must be >= 1")
    lam = spec.lam if lam is None else lam
    if variant == "chunk_rate":
        return spec.mean_k() * lam * dist.mean / L
    if variant == "min_based":
        return lam * expected_extreme(dist, L, "min")
    raise InvalidSpec(f"unknown traffic-intensity variant {variant!r}")


def solve_lambda_for_rho(spec, L, dist, variant, rho_target):
    if not rho_target > 0:
        raise InvalidSpec("rho_target must be positive")
    return rho_target / traffic_intensity(spec, L, dist, variant, lam=1.0)


def pad_codes(requests, L):
    """Raise every n so that each distance is at least L (k unchanged)."""
    return tuple(Request(r.id, r.arrival, r.k, max(r.n, r.k + L - 1)) for r in requests)


def pad_spec(spec, L):
    if spec.is_explicit:
        return WorkloadSpec.explicit(pad_codes(spec.requests, L))
    mix = tuple((p, (max(n, k + L - 1), k)) for p, (n, k) in spec.code_mix)
    return WorkloadSpec("stochastic", (), spec.N, spec.lam, spec.arrival_mixture, mix)


def example_one():
    """Two simultaneous requests: (k=1, n=4) and (k=2, n=2)."""
    return WorkloadSpec.explicit([Request(0, 0.0, 1, 4), Request(1, 0.0, 2, 2)])


def example_two(eps=0.01):
    """(k=2, n=3) at time 0 and (k=1, n=2) at time eps."""
    return WorkloadSpec.explicit([Request(0, 0.0, 2, 3), Request(1, float(eps), 1, 2)])


# (probability, rate multiple of lambda) for the bursty inter-arrival law
BURSTY_ARRIVALS = ((0.99, 0.5), (0.01, 50.5))
MIXED_CODES = ((0.9, (3, 1)), (0.1, (14, 10)))
REPETITION_CODES = ((1.0, (3, 1)),)
