"""Request selection policies: FIFO, static SRJF, and calibrated SRJF.

The calibrated policy re-probes the prefix cache for every waiting
request each time it schedules, scores each request as
estimated-JCT minus lambda times queueing time, and picks the minimum.
Probing is read-only; LRU state moves only when a request executes.
Exactly one request is selected per call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .cache import PrefixCache
from .jct import JctProfile, get_jct, proxy_miss

DEFAULT_LAMBDA = 0.5

POLICY_FIFO = "fifo"
POLICY_SRJF = "srjf"
POLICY_SRJF_CALIBRATED = "srjf-calibrated"

SCORING_PROXY = "proxy"
SCORING_PROFILE = "profile"


class SchedulingError(ValueError):
    """Invalid policy configuration or empty queue."""


@dataclass(frozen=True)
class Policy:
    """Scheduling policy selector."""

    kind: str
    lam: float = DEFAULT_LAMBDA  # starvation offset weight, >= 0
    scoring: str = SCORING_PROXY

    def __post_init__(self):
        if self.kind not in (POLICY_FIFO, POLICY_SRJF, POLICY_SRJF_CALIBRATED):
            raise SchedulingError(f"unknown policy {self.kind!r}")
        if self.lam < 0:
            raise SchedulingError("lambda must be >= 0")
        if self.scoring not in (SCORING_PROXY, SCORING_PROFILE):
            raise SchedulingError(f"unknown scoring {self.scoring!r}")

    @classmethod
    def fifo(cls) -> "Policy":
        return cls(POLICY_FIFO)

    @classmethod
    def srjf_static(cls, scoring: str = SCORING_PROXY) -> "Policy":
        return cls(POLICY_SRJF, scoring=scoring)

    @classmethod
    def srjf_calibrated(
        cls, lam: float = DEFAULT_LAMBDA, scoring: str = SCORING_PROXY
    ) -> "Policy":
        return cls(POLICY_SRJF_CALIBRATED, lam=lam, scoring=scoring)


@dataclass(eq=False)
class WaitingRequest:
    """Queue entry: the request plus scheduling bookkeeping.

    frozen_jct is estimated once when the request enters the queue and
    is what the static SRJF policy sorts by. chain carries the
    precomputed block digest chain used for cache probes.
    """

    request: object  # needs .id, .n_input, .tokens
    arrival: float
    frozen_jct: float = 0.0
    chain: list = field(default_factory=list)


def estimate_jct(
    n_input: int, n_cached: int, scoring: str, profile: JctProfile | None
) -> float:
    """JCT estimate under the chosen scoring mode."""
    if scoring == SCORING_PROXY:
        return float(proxy_miss(n_input, n_cached))
    if profile is None:
        raise SchedulingError("profile scoring requires a fitted JctProfile")
    return get_jct(profile, n_input, n_cached)


def score(
    wr: WaitingRequest,
    n_cached: int,
    policy: Policy,
    profile: JctProfile | None,
    now: float,
) -> float:
    """Calibrated-SRJF score: JCT estimate minus lambda * queueing time."""
    if policy.kind != POLICY_SRJF_CALIBRATED:
        raise SchedulingError("score applies to the calibrated policy only")
    if now < wr.arrival:
        raise SchedulingError(f"now {now} precedes arrival {wr.arrival}")
    est = estimate_jct(wr.request.n_input, n_cached, policy.scoring, profile)
    return est - policy.lam * (now - wr.arrival)


def _probe(wr: WaitingRequest, cache: PrefixCache) -> int:
    if wr.chain:
        return cache.match_chain(wr.chain)
    return cache.match(wr.request.tokens)


def schedule_next(
    queue: Sequence[WaitingRequest],
    cache: PrefixCache,
    profile: JctProfile | None,
    policy: Policy,
    now: float,
) -> WaitingRequest:
    """Pick the next request to run; the caller removes it from the queue.

    Ties break by arrival time, then request id, so selection is a pure
    function of (queue, cache state, clock).
    """
    if not queue:
        raise SchedulingError("cannot schedule from an empty queue")
    if policy.kind == POLICY_FIFO:
        return min(queue, key=lambda wr: (wr.arrival, wr.request.id))
    if policy.kind == POLICY_SRJF:
        return min(queue, key=lambda wr: (wr.frozen_jct, wr.arrival, wr.request.id))
    return min(
        queue,
        key=lambda wr: (
            score(wr, _probe(wr, cache), policy, profile, now),
            wr.arrival,
            wr.request.id,
        ),
    )
