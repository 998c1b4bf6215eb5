"""Chunk downloading-time laws.

Three families are supported: exponential, shifted exponential (a constant
plus an exponential tail) and finite mixtures of exponentials.  Each law
exposes its exact survival function, vectorised sampling, exact residual-life
sampling given an elapsed service time, and closed-form expectations of the
maximum/minimum of L i.i.d. copies.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidSpec, UnsupportedAnalytic, ZeroTailProbability
from .rng import as_generator

__all__ = [
    "Aging",
    "BorderlineClassificationWarning",
    "Estimate",
    "Exponential",
    "ExponentialMixture",
    "ShiftedExponential",
    "classify",
    "expected_extreme",
    "harmonic",
    "monte_carlo_extreme",
    "parse_dist",
    "residual_sample",
    "sample",
    "tail",
]


class Aging(str, Enum):
    NLU = "NLU"
    NSU = "NSU"
    BOTH = "both"
    NEITHER = "neither"


class BorderlineClassificationWarning(UserWarning):
    """Aging inequalities hold or fail only by a margin near the tolerance."""


class Estimate(NamedTuple):
    value: float
    std_err: float


def harmonic(L):
    """H_L = 1 + 1/2 + ... + 1/L (0 for L <= 0)."""
    return math.fsum(1.0 / l for l in range(1, L + 1))


def _check_rate(rate, what="rate"):
    if not (rate > 0 and math.isfinite(rate)):
        raise InvalidSpec(f"{what} must be positive and finite, got {rate!r}")


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        _check_rate(self.rate)

    @property
    def mean(self):
        return 1.0 / self.rate

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        out = np.exp(-self.rate * np.maximum(t, 0.0))
        return out if out.ndim else float(out)

    def sample(self, rng=None, size=None):
        return as_generator(rng).standard_exponential(size) / self.rate

    def residual_sample(self, elapsed, rng=None, size=None):
        return self.sample(rng, size)

    def from_variates(self, e, u):
        return e / self.rate

    def to_config(self):
        return {"kind": "exponential", "mu": self.rate}


@dataclass(frozen=True)
class ShiftedExponential:
    """X = shift + Exponential(rate)."""

    shift: float
    rate: float

    def __post_init__(self):
        _check_rate(self.rate)
        if not (self.shift >= 0 and math.isfinite(self.shift)):
            raise InvalidSpec(f"shift must be finite and >= 0, got {self.shift!r}")

    @classmethod
    def with_mean(cls, mu, shift_frac):
        """Law with mean 1/mu whose constant part is shift_frac/mu."""
        _check_rate(mu, "mu")
        if not 0 <= shift_frac < 1:
            raise InvalidSpec(f"shift_frac must lie in [0, 1), got {shift_frac!r}")
        return cls(shift=shift_frac / mu, rate=mu / (1.0 - shift_frac))

    @property
    def mean(self):
        return self.shift + 1.0 / self.rate

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(t <= self.shift, 1.0, np.exp(-self.rate * (t - self.shift)))
        return out if out.ndim else float(out)

    def sample(self, rng=None, size=None):
        return self.shift + as_generator(rng).standard_exponential(size) / self.rate

    def residual_sample(self, elapsed, rng=None, size=None):
        left = max(self.shift - elapsed, 0.0)
        return left + as_generator(rng).standard_exponential(size) / self.rate

    def from_variates(self, e, u):
        return self.shift + e / self.rate

    def to_config(self):
        mu = 1.0 / self.mean
        return {"kind": "shifted_exp", "mu": mu, "shift_frac": self.shift * mu}


@dataclass(frozen=True)
class ExponentialMixture:
    """Hyperexponential law: Exponential(rates[i]) with probability weights[i]."""

    weights: tuple
    rates: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        r = tuple(float(x) for x in self.rates)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)
        if not w or len(w) != len(r):
            raise InvalidSpec("mixture needs matching, nonempty weights and rates")
        if any(x <= 0 for x in w) or abs(math.fsum(w) - 1.0) > 1e-12:
            raise InvalidSpec(f"mixture weights must be positive and sum to 1, got {w}")
        for x in r:
            _check_rate(x)
        object.__setattr__(self, "_cum", np.cumsum(w))

    @classmethod
    def scaled(cls, mu, components):
        """Build from ``[(weight, rate multiple of mu), ...]``."""
        _check_rate(mu, "mu")
        return cls(tuple(c[0] for c in components), tuple(c[1] * mu for c in components))

    @property
    def mean(self):
        return math.fsum(w / r for w, r in zip(self.weights, self.rates))

    def tail(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        out = sum(w * np.exp(-r * t) for w, r in zip(self.weights, self.rates))
        return out if np.ndim(out) else float(out)

    def _pick(self, u):
        idx = np.searchsorted(self._cum, u, side="right")
        return np.minimum(idx, len(self.rates) - 1)

    def sample(self, rng=None, size=None):
        gen = as_generator(rng)
        u = gen.random(size)
        e = gen.standard_exponential(size)
        return e / np.asarray(self.rates)[self._pick(u)]

    def residual_sample(self, elapsed, rng=None, size=None):
        # posterior over components given survival to `elapsed`
        logw = np.log(self.weights) - np.asarray(self.rates) * elapsed
        post = np.exp(logw - logw.max())
        post /= post.sum()
        gen = as_generator(rng)
        u = gen.random(size)
        e = gen.standard_exponential(size)
        idx = np.minimum(np.searchsorted(np.cumsum(post), u, side="right"), len(post) - 1)
        return e / np.asarray(self.rates)[idx]

    def from_variates(self, e, u):
        cum = self._cum
        for i in range(len(cum) - 1):
            if u < cum[i]:
                return e / self.rates[i]
        return e / self.rates[-1]

    def to_config(self):
        return {"kind": "exp_mixture", "mu": 1.0, "components": [list(c) for c in zip(self.weights, self.rates)]}


DownloadDist = Exponential | ShiftedExponential | ExponentialMixture


def parse_dist(cfg):
    """Build a law from its config mapping (see README for the three kinds)."""
    try:
        kind = cfg["kind"]
        mu = float(cfg["mu"])
        if kind == "exponential":
            return Exponential(mu)
        if kind == "shifted_exp":
            return ShiftedExponential.with_mean(mu, float(cfg["shift_frac"]))
        if kind == "exp_mixture":
            return ExponentialMixture.scaled(mu, [(float(w), float(m)) for w, m in cfg["components"]])
    except (KeyError, TypeError) as exc:
        raise InvalidSpec(f"bad distribution config {cfg!r}: {exc}") from None
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def sample(dist, rng=None, size=None):
    return dist.sample(rng, size)


def tail(dist, t):
    """Exact P(X > t)."""
    return dist.tail(t)


def residual_sample(dist, elapsed, rng=None, size=None):
    """Draw X - elapsed conditioned on X > elapsed."""
    if elapsed < 0:
        raise InvalidSpec("elapsed must be >= 0")
    if dist.tail(elapsed) <= 0.0:
        raise ZeroTailProbability(f"P(X > {elapsed}) = 0 for {dist}")
    return dist.residual_sample(elapsed, rng, size)


def classify(dist, t_grid=None, tau_grid=None, tol=1e-12):
    """Decide whether ``dist`` is New-Longer-than-Used, New-Shorter-than-Used, both or neither.

    Both aging inequalities are checked on every (t, tau) grid pair where
    P(X > tau) > 0.  The default grid is 0, 0.05/mu, ..., 10/mu with 1/mu the
    mean of ``dist``.
    """
    if t_grid is None or tau_grid is None:
        default = np.arange(201) * (0.05 * dist.mean)
        t_grid = default if t_grid is None else t_grid
        tau_grid = default if tau_grid is None else tau_grid
    t = np.asarray(t_grid, dtype=float)[:, None]
    tau = np.asarray(tau_grid, dtype=float)[None, :]
    if t.size == 0 or tau.size == 0 or (t < 0).any() or (tau < 0).any():
        raise InvalidSpec("grids must be nonempty and nonnegative")
    s_tau = np.broadcast_to(dist.tail(tau), (t.shape[0], tau.shape[1]))
    s_t = np.broadcast_to(dist.tail(t), s_tau.shape)
    s_sum = dist.tail(t + tau)
    ok = s_tau > 0
    cond = np.divide(s_sum, s_tau, out=np.zeros_like(s_sum), where=ok)
    diff = (s_t - cond)[ok]  # >= 0 is NLU, <= 0 is NSU
    nlu = bool((diff >= -tol).all())
    nsu = bool((diff <= tol).all())
    margin = np.abs(diff).max() if diff.size else 0.0
    if tol < margin < 1e3 * tol:
        warnings.warn(
            f"aging classification of {dist} rests on margins of {margin:.3g}",
            BorderlineClassificationWarning,
            stacklevel=2,
        )
    if nlu and nsu:
        return Aging.BOTH
    if nlu:
        return Aging.NLU
    if nsu:
        return Aging.NSU
    return Aging.NEITHER


_MAX_MIXTURE_TERMS = 200_000


def _mixture_min(dist, L):
    # E min = int_0^inf S(t)^L dt, expanded multinomially over components
    w, r = dist.weights, dist.rates
    m = len(w)
    if math.comb(L + m - 1, m - 1) > _MAX_MIXTURE_TERMS:
        raise UnsupportedAnalytic(f"mixture expansion too large for L={L}")
    terms = []
    for counts in _compositions(L, m):
        coef = math.factorial(L)
        prob = 1.0
        rate = 0.0
        for c, wi, ri in zip(counts, w, r):
            coef //= math.factorial(c)
            prob *= wi**c
            rate += c * ri
        terms.append(coef * prob / rate)
    return math.fsum(terms)


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def expected_extreme(dist, L, which="max"):
    """Closed-form E[max] or E[min] of L i.i.d. downloading times."""
    if L < 1:
        raise InvalidSpec("L must be >= 1")
    if which not in ("max", "min"):
        raise InvalidSpec(f"which must be 'max' or 'min', got {which!r}")
    if isinstance(dist, Exponential):
        return harmonic(L) / dist.rate if which == "max" else 1.0 / (L * dist.rate)
    if isinstance(dist, ShiftedExponential):
        if which == "max":
            return dist.shift + harmonic(L) / dist.rate
        return dist.shift + 1.0 / (L * dist.rate)
    if isinstance(dist, ExponentialMixture):
        if which == "min":
            return _mixture_min(dist, L)
        if L > 30:
            # inclusion-exclusion cancels catastrophically beyond this size
            raise UnsupportedAnalytic(f"mixture maximum for L={L}")
        return math.fsum((-1) ** (j + 1) * math.comb(L, j) * _mixture_min(dist, j) for j in range(1, L + 1))
    raise UnsupportedAnalytic(f"no closed form for {type(dist).__name__}")


def monte_carlo_extreme(dist, L, which="max", reps=100_000, rng=None):
    """Monte Carlo E[max]/E[min] of L i.i.d. draws with its standard error."""
    if L < 1 or reps < 2:
        raise InvalidSpec("need L >= 1 and reps >= 2")
    draws = dist.sample(as_generator(rng), (reps, L))
    ext = draws.max(axis=1) if which == "max" else draws.min(axis=1)
    return Estimate(float(ext.mean()), float(ext.std(ddof=1) / math.sqrt(reps)))

