"""Closed-form delay-gap bounds and bound-versus-measurement verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .distributions import Aging, Exponential, classify, expected_extreme, harmonic
from .exceptions import InvalidSpec, UnsupportedSetting

SETTINGS = (
    "exp_preemptive_dmin_ge_L",
    "exp_preemptive_general",
    "exp_nonpreemptive_dmin_ge_L",
    "exp_nonpreemptive_general",
    "nlu_nonpreemptive",
    "nlu_preemptive",
    "nsu_repetition_nonpreemptive",
)


@dataclass(frozen=True)
class GapBoundQuery:
    setting: str
    L: int
    d_min: int
    dist: object

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise UnsupportedSetting(f"unknown setting {self.setting!r}")
        if self.L < 1 or self.d_min < 1:
            raise InvalidSpec("need L >= 1 and d_min >= 1")


def _rate(q):
    if not isinstance(q.dist, Exponential):
        raise UnsupportedSetting(f"{q.setting} needs exponential downloading times, got {q.dist}")
    return q.dist.rate


def _low_redundancy_term(L, d_min, mu):
    return math.fsum(1.0 / l for l in range(d_min, L)) / mu


def gap_bound(q):
    """Upper bound (seconds) on the extra mean flow time over the optimum.

    Zero means the matching policy is delay-optimal in that setting.
    """
    s = q.setting
    if s == "exp_preemptive_dmin_ge_L":
        _rate(q)
        if q.d_min < q.L:
            raise UnsupportedSetting("exp_preemptive_dmin_ge_L needs d_min >= L")
        return 0.0
    if s == "exp_preemptive_general":
        return _low_redundancy_term(q.L, q.d_min, _rate(q))
    if s == "exp_nonpreemptive_dmin_ge_L":
        mu = _rate(q)
        if q.d_min < q.L:
            raise UnsupportedSetting("exp_nonpreemptive_dmin_ge_L needs d_min >= L")
        return 1.0 / mu
    if s == "exp_nonpreemptive_general":
        mu = _rate(q)
        return _low_redundancy_term(q.L, q.d_min, mu) + 1.0 / mu
    if s in ("nlu_nonpreemptive", "nlu_preemptive"):
        if classify(q.dist) not in (Aging.NLU, Aging.BOTH):
            raise UnsupportedSetting(f"{s} needs an NLU downloading-time law")
        below = expected_extreme(q.dist, q.L - 1, "max") if q.L > 1 else 0.0
        return expected_extreme(q.dist, q.L, "max") + below
    # nsu_repetition_nonpreemptive
    if classify(q.dist) not in (Aging.NSU, Aging.BOTH):
        raise UnsupportedSetting(f"{s} needs an NSU downloading-time law")
    return 0.0


def harmonic_log_estimate(L, d_min, mu):
    """(1/mu)(ln((L-1)/d_min) + 1): a display-only companion to the exact bound."""
    if d_min >= L:
        return 0.0
    return (math.log((L - 1) / d_min) + 1.0) / mu


def bound_table(L, d_min, dist):
    """Rows ``(setting, bound or None, note)`` for every setting."""
    rows = []
    for s in SETTINGS:
        try:
            rows.append((s, gap_bound(GapBoundQuery(s, L, d_min, dist)), ""))
        except UnsupportedSetting as exc:
            rows.append((s, None, str(exc)))
    return rows


class Verdict(str, Enum):
    WITHIN = "within"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


def verdict(measured, std_err, bound):
    """Classify a measured gap against a theoretical bound.

    violated: measured - 3 se > bound.  inconclusive: the mean exceeds the
    bound but the 3 se band reaches it.  within: the mean is at or below the
    bound.
    """
    if std_err < 0:
        raise InvalidSpec("std_err must be >= 0")
    if measured - 3.0 * std_err > bound:
        return Verdict.VIOLATED
    if measured > bound:
        return Verdict.INCONCLUSIVE
    return Verdict.WITHIN


__all__ = [
    "GapBoundQuery",
    "SETTINGS",
    "Verdict",
    "bound_table",
    "gap_bound",
    "harmonic",
    "harmonic_log_estimate",
    "verdict",
]
