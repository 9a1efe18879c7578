"""Deterministic trace generators and Poisson arrival assignment.

Two bundled workloads: post recommendation (20 users, 50 requests each,
a long shared profile prefix plus a 150-token post suffix) and credit
verification (60 users, one long request each, no sharing). Token ids
are 32-bit values from counter-seeded streams, so a trace is a pure
function of (generator, seed) and files only need to store lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cache import block_chain

# stream selectors for SeedSequence entropy: (trace_seed, stream, index)
_STREAM_PROFILE = 0
_STREAM_SUFFIX = 1
_STREAM_POSTREC_LENGTHS = 2
_STREAM_CREDIT_LENGTHS = 3
_STREAM_ARRIVALS = 4

POST_REC_USERS = 20
POST_REC_REQUESTS_PER_USER = 50
POST_REC_PROFILE_MEAN = 14_000
POST_REC_PROFILE_STD = 3_000
POST_REC_PROFILE_MIN = 11_000
POST_REC_PROFILE_MAX = 17_000
POST_REC_SUFFIX_TOKENS = 150

CREDIT_USERS = 60
CREDIT_MIN_TOKENS = 40_000
CREDIT_MAX_TOKENS = 60_000


class WorkloadError(ValueError):
    """Invalid generator parameters or trace file."""


@dataclass(frozen=True)
class Request:
    """One prefill-only job: a shared profile prefix plus a request suffix."""

    id: int
    user_id: int
    arrival: float
    profile_len: int
    total_len: int
    seed: int

    @property
    def n_input(self) -> int:
        return self.total_len

    @property
    def tokens(self) -> np.ndarray:
        """Token ids, regenerated on demand from the seeded streams."""
        return np.concatenate([self.profile_tokens, self.suffix_tokens])

    @property
    def profile_tokens(self) -> np.ndarray:
        return _token_stream((self.seed, _STREAM_PROFILE, self.user_id), self.profile_len)

    @property
    def suffix_tokens(self) -> np.ndarray:
        n = self.total_len - self.profile_len
        if n == 0:
            return np.empty(0, dtype=np.uint32)
        # first suffix token is the request id, so sibling requests are
        # guaranteed to diverge right after the shared profile
        suffix = _token_stream((self.seed, _STREAM_SUFFIX, self.id), n)
        suffix[0] = np.uint32(self.id)
        return suffix

    def digest_chain(self, block_tokens: int, profile_cache: dict | None = None) -> list[bytes]:
        """Block digest chain of the tokens; memoizes the profile part."""
        if profile_cache is None or self.profile_len < block_tokens:
            return block_chain(self.tokens, block_tokens)
        key = (self.seed, self.user_id, self.profile_len)
        base = profile_cache.get(key)
        if base is None:
            base = block_chain(self.profile_tokens, block_tokens)
            profile_cache[key] = base
        return block_chain(self.tokens, block_tokens, base=base)


@dataclass(frozen=True)
class Trace:
    """Time-ordered request sequence; regeneration is byte-identical per seed."""

    name: str
    seed: int
    requests: tuple[Request, ...]

    def __post_init__(self):
        arrivals = [r.arrival for r in self.requests]
        if any(b < a for a, b in zip(arrivals, arrivals[1:])):
            raise WorkloadError("trace arrivals must be nondecreasing")

    @property
    def total_tokens(self) -> int:
        return sum(r.total_len for r in self.requests)

    @property
    def max_request_len(self) -> int:
        return max((r.total_len for r in self.requests), default=0)


def _token_stream(key: Sequence[int], n: int) -> np.ndarray:
    rng = np.random.default_rng(list(key))
    return rng.integers(0, 2**32, size=n, dtype=np.uint32)


def post_rec_profile_lengths(seed: int) -> list[int]:
    """Per-user profile lengths: clamped Normal(14000, 3000) draws."""
    rng = np.random.default_rng([seed, _STREAM_POSTREC_LENGTHS])
    draws = rng.normal(POST_REC_PROFILE_MEAN, POST_REC_PROFILE_STD, size=POST_REC_USERS)
    return [int(x) for x in np.clip(np.rint(draws), POST_REC_PROFILE_MIN, POST_REC_PROFILE_MAX)]


def credit_lengths(seed: int) -> list[int]:
    """Per-user credit-history lengths, uniform on the stated range."""
    rng = np.random.default_rng([seed, _STREAM_CREDIT_LENGTHS])
    return [
        int(x)
        for x in rng.integers(CREDIT_MIN_TOKENS, CREDIT_MAX_TOKENS + 1, size=CREDIT_USERS)
    ]


def gen_post_recommendation(seed: int) -> Trace:
    """Post-recommendation workload: heavy prefix reuse within each user."""
    lengths = post_rec_profile_lengths(seed)
    requests = []
    rid = 0
    for user, profile_len in enumerate(lengths):
        for _ in range(POST_REC_REQUESTS_PER_USER):
            requests.append(
                Request(
                    id=rid,
                    user_id=user,
                    arrival=0.0,
                    profile_len=profile_len,
                    total_len=profile_len + POST_REC_SUFFIX_TOKENS,
                    seed=seed,
                )
            )
            rid += 1
    return Trace(name="post-rec", seed=seed, requests=tuple(requests))


def gen_credit_verification(seed: int) -> Trace:
    """Credit-verification workload: long requests, no prefix sharing."""
    requests = tuple(
        Request(
            id=user,
            user_id=user,
            arrival=0.0,
            profile_len=length,  # the whole request is one user document
            total_len=length,
            seed=seed,
        )
        for user, length in enumerate(credit_lengths(seed))
    )
    return Trace(name="credit", seed=seed, requests=requests)


def max_workload_request_len(name: str, seed: int = 0) -> int:
    """Longest request either bundled workload can emit for a seed."""
    if name == "post-rec":
        return max(post_rec_profile_lengths(seed)) + POST_REC_SUFFIX_TOKENS
    if name == "credit":
        return max(credit_lengths(seed))
    raise WorkloadError(f"unknown workload {name!r}")


def poisson_arrivals(
    trace: Trace, rate: float, seed: int, keep_sessions: bool = True
) -> Trace:
    """Reassign arrivals as a Poisson process at `rate` requests/second.

    Request order is a seeded shuffle. With keep_sessions each user's
    requests stay contiguous in their original relative order (the user
    session arrives as one burst); otherwise all requests interleave.
    """
    if rate <= 0:
        raise WorkloadError("rate must be positive")
    rng = np.random.default_rng([seed, _STREAM_ARRIVALS])
    n = len(trace.requests)
    if keep_sessions:
        users = list(dict.fromkeys(r.user_id for r in trace.requests))
        order = list(rng.permutation(len(users)))
        by_user: dict[int, list[Request]] = {u: [] for u in users}
        for r in trace.requests:
            by_user[r.user_id].append(r)
        shuffled = [r for idx in order for r in by_user[users[idx]]]
    else:
        shuffled = [trace.requests[i] for i in rng.permutation(n)]
    gaps = rng.exponential(1.0 / rate, size=n)
    arrivals = np.cumsum(gaps)
    requests = tuple(
        replace(r, arrival=float(t)) for r, t in zip(shuffled, arrivals)
    )
    return Trace(name=trace.name, seed=trace.seed, requests=requests)


_TRACE_HEADER = "id,user_id,arrival_seconds,profile_len,total_len,seed"


def save_trace(trace: Trace, path: str | Path):
    """Write the line-delimited record form (tokens stay regenerable)."""
    lines = [_TRACE_HEADER]
    for r in trace.requests:
        lines.append(
            f"{r.id},{r.user_id},{r.arrival!r},{r.profile_len},{r.total_len},{r.seed}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trace(path: str | Path, name: str | None = None) -> Trace:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _TRACE_HEADER:
        raise WorkloadError(f"{path}: missing trace header")
    requests = []
    seeds = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise WorkloadError(f"{path}:{lineno}: expected 6 fields")
        rid, user, arrival, profile_len, total_len, seed = parts
        requests.append(
            Request(
                id=int(rid),
                user_id=int(user),
                arrival=float(arrival),
                profile_len=int(profile_len),
                total_len=int(total_len),
                seed=int(seed),
            )
        )
        seeds.add(int(seed))
    seed = seeds.pop() if len(seeds) == 1 else 0
    return Trace(name=name or path.stem, seed=seed, requests=tuple(requests))


def worked_example() -> tuple[Trace, int]:
    """The four-request scheduling fixture and its cache capacity (tokens).

    Four simultaneous arrivals with lengths A < C < B < D; A's tokens are
    D's prefix and C's are B's. Capacity holds one mid-sized request, so
    whichever request executes evicts the previous resident state.
    Replaying all three policies over this fixture gives cache hits
    fifo=1, srjf=1, srjf-calibrated=2 with calibrated order A, D, C, B.
    """
    len_a, len_c, len_b, len_d = 1024, 2048, 2560, 2944
    seed = 7
    base_ad = _token_stream((seed, 10, 0), len_d)
    base_cb = _token_stream((seed, 10, 1), len_b)
    tokens = {
        0: base_ad[:len_a],  # A
        1: base_cb[:len_b],  # B
        2: base_cb[:len_c],  # C
        3: base_ad[:len_d],  # D
    }
    requests = tuple(
        _FixedRequest(
            id=rid,
            user_id=0 if rid in (0, 3) else 1,
            arrival=0.0,
            profile_len=len(toks),
            total_len=len(toks),
            seed=seed,
            fixed_tokens=toks,
        )
        for rid, toks in tokens.items()
    )
    return Trace(name="worked-example", seed=seed, requests=requests), 2048


@dataclass(frozen=True, eq=False)
class _FixedRequest(Request):
    """Request carrying explicit tokens (used by the worked example)."""

    fixed_tokens: np.ndarray = None

    @property
    def tokens(self) -> np.ndarray:
        return self.fixed_tokens

    @property
    def profile_tokens(self) -> np.ndarray:
        return self.fixed_tokens

    @property
    def suffix_tokens(self) -> np.ndarray:
        return np.empty(0, dtype=np.uint32)
