"""Latency cost models for each engine variant.

Service time is a fixed per-request overhead, a linear term over
cache-miss tokens, and a quadratic causal-attention term; cached tokens
skip their own query rows but still serve as keys for miss rows, hence
the (n^2 - n_cached^2)/2 pair count. Chunked prefill pays an attention
penalty of 1 + k/chunk, tensor parallelism divides compute across
devices and adds all-reduce time, and pipeline parallelism keeps
single-device latency while the simulator reduces its serving rate by
the bubble fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .geometry import (
    BudgetError,
    DEFAULT_CHUNK,
    GpuSpec,
    ModelGeometry,
    PrefillMode,
    intermediate_bytes_per_token,
    kv_bytes_per_token,
    largest_fitting,
    peak_prefill_memory,
)

# the one throughput anchor the chunk penalty is calibrated against:
# chunk 512 over a 20,000-token input costs 14% end-to-end throughput
PENALTY_ANCHOR_CHUNK = 512
PENALTY_ANCHOR_TOKENS = 20_000
PENALTY_ANCHOR_LOSS = 0.14

DEFAULT_PP_BUBBLE = 0.15


class CapacityError(ValueError):
    """Request(s) longer than the variant's maximum input length."""

    def __init__(self, message: str, offenders: list[int] | None = None):
        super().__init__(message)
        self.offenders = offenders or []


class CostError(ValueError):
    """Invalid cost parameters or variant description."""


@dataclass(frozen=True)
class EngineVariant:
    """One serving configuration: execution mode plus parallelism."""

    kind: str  # prefillonly | paged | chunked | tp | pp
    chunk: int | None = None
    degree: int | None = None

    KINDS = ("prefillonly", "paged", "chunked", "tp", "pp")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise CostError(f"unknown variant kind {self.kind!r}")
        if self.kind in ("prefillonly", "chunked"):
            if self.chunk is None or self.chunk < 1:
                raise CostError(f"{self.kind} needs chunk >= 1")
        elif self.chunk is not None:
            raise CostError(f"{self.kind} takes no chunk")
        if self.kind in ("tp", "pp"):
            if self.degree is None or self.degree < 2:
                raise CostError(f"{self.kind} needs degree >= 2")
        elif self.degree is not None:
            raise CostError(f"{self.kind} takes no degree")

    @classmethod
    def prefill_only_hybrid(cls, chunk: int = DEFAULT_CHUNK) -> "EngineVariant":
        return cls("prefillonly", chunk=chunk)

    @classmethod
    def paged_attention(cls) -> "EngineVariant":
        return cls("paged")

    @classmethod
    def chunked_prefill(cls, chunk: int = DEFAULT_CHUNK) -> "EngineVariant":
        return cls("chunked", chunk=chunk)

    @classmethod
    def tensor_parallel(cls, degree: int = 2) -> "EngineVariant":
        return cls("tp", degree=degree)

    @classmethod
    def pipeline_parallel(cls, degree: int = 2) -> "EngineVariant":
        return cls("pp", degree=degree)

    @classmethod
    def parse(cls, text: str) -> "EngineVariant":
        """Parse CLI spellings like prefillonly, chunked:512, tp:2."""
        base, _, arg = text.partition(":")
        base = base.strip().lower()
        if base == "prefillonly":
            return cls.prefill_only_hybrid(int(arg) if arg else DEFAULT_CHUNK)
        if base == "paged":
            return cls.paged_attention()
        if base == "chunked":
            return cls.chunked_prefill(int(arg) if arg else DEFAULT_CHUNK)
        if base == "tp":
            return cls.tensor_parallel(int(arg) if arg else 2)
        if base == "pp":
            return cls.pipeline_parallel(int(arg) if arg else 2)
        raise CostError(f"unknown variant {text!r}")

    @property
    def gpu_count(self) -> int:
        return self.degree if self.degree else 1

    @property
    def label(self) -> str:
        if self.kind in ("prefillonly", "chunked"):
            return f"{self.kind}:{self.chunk}"
        if self.kind in ("tp", "pp"):
            return f"{self.kind}:{self.degree}"
        return self.kind


def linear_flops_per_token(geom: ModelGeometry) -> float:
    """Dense-layer FLOPs to push one token through every layer."""
    h = geom.hidden_size
    kv_dim = geom.num_kv_heads * geom.head_dim
    per_layer = 2.0 * (h * (h + 2 * kv_dim) + h * h + 3 * h * geom.intermediate_size)
    return geom.num_layers * per_layer


def attn_flops_per_pair(geom: ModelGeometry) -> float:
    """Attention FLOPs for one (query, key) token pair across all layers."""
    return 4.0 * geom.hidden_size * geom.num_layers


@dataclass(frozen=True)
class CostParams:
    """Calibrated service-time constants for one (model, GPU) pairing."""

    c_linear: float  # seconds per miss token of linear work
    c_attn: float  # seconds per token pair
    c_fixed: float  # seconds per request
    chunk_penalty_k: float  # penalty(chunk) = 1 + k/chunk while chunking
    comm_bytes_per_token_per_layer: float
    pp_bubble_fraction: float = DEFAULT_PP_BUBBLE

    def __post_init__(self):
        if min(self.c_linear, self.c_attn, self.c_fixed, self.chunk_penalty_k) < 0:
            raise CostError("cost constants must be nonnegative")
        if self.comm_bytes_per_token_per_layer < 0:
            raise CostError("comm bytes must be nonnegative")
        if not 0.0 <= self.pp_bubble_fraction < 1.0:
            raise CostError("pp_bubble_fraction must be in [0, 1)")

    def penalty(self, chunk: int, n_input: int) -> float:
        """Attention slowdown of chunking; 1 once the chunk covers the input."""
        if chunk >= n_input:
            return 1.0
        return 1.0 + self.chunk_penalty_k / chunk

    @classmethod
    def derive(
        cls,
        geom: ModelGeometry,
        gpu: GpuSpec,
        pp_bubble_fraction: float = DEFAULT_PP_BUBBLE,
    ) -> "CostParams":
        """Build params from preset rates, one-point-calibrating the penalty.

        The chunk penalty k is fixed so that chunk 512 over a 20,000-token
        cold input is exactly 14% slower end-to-end than unchunked
        execution under these rates.
        """
        c_linear = linear_flops_per_token(geom) / gpu.linear_rate
        c_attn = attn_flops_per_pair(geom) / gpu.attn_rate
        c_fixed = gpu.fixed_overhead
        # two all-reduces per layer; ring volume 2(P-1)/P per payload byte.
        # One of the two factors of 2 is folded in here, the other plus the
        # (P-1)/P live in the tensor-parallel term of execute_time.
        comm = 2.0 * geom.hidden_size * geom.act_dtype_bytes

        n = PENALTY_ANCHOR_TOKENS
        pairs = n * n / 2.0
        base = c_fixed + c_linear * n + c_attn * pairs
        slowdown = 1.0 / (1.0 - PENALTY_ANCHOR_LOSS) - 1.0
        k = PENALTY_ANCHOR_CHUNK * slowdown * base / (c_attn * pairs)
        return cls(
            c_linear=c_linear,
            c_attn=c_attn,
            c_fixed=c_fixed,
            chunk_penalty_k=k,
            comm_bytes_per_token_per_layer=comm,
            pp_bubble_fraction=pp_bubble_fraction,
        )


def _pp_peak_bytes(geom: ModelGeometry, degree: int, n: int, chunk: int) -> int:
    """Aggregate peak of pipeline stages with microbatched activations."""
    _, kv_total = kv_bytes_per_token(geom)
    spike = geom.act_overhead_factor * intermediate_bytes_per_token(geom)
    return geom.weight_bytes + kv_total * n + math.ceil(degree * spike * min(n, chunk))


@lru_cache(maxsize=None)
def variant_mil(variant: EngineVariant, geom: ModelGeometry, gpu: GpuSpec) -> int:
    """Maximum input length the variant can serve on this hardware."""
    budget = gpu.total_memory * variant.gpu_count
    if budget < geom.weight_bytes:
        raise BudgetError(
            f"{gpu.name} x{variant.gpu_count}: budget below {geom.name} weights"
        )
    if variant.kind == "prefillonly":
        peak = lambda n: peak_prefill_memory(geom, n, PrefillMode.hybrid(variant.chunk))
    elif variant.kind == "paged":
        peak = lambda n: peak_prefill_memory(geom, n, PrefillMode.full())
    elif variant.kind == "chunked":
        peak = lambda n: peak_prefill_memory(geom, n, PrefillMode.chunked(variant.chunk))
    elif variant.kind == "tp":
        # weights, KV, and activations all shard across the group
        peak = lambda n: peak_prefill_memory(geom, n, PrefillMode.full())
    else:  # pp
        peak = lambda n: _pp_peak_bytes(geom, variant.degree, n, DEFAULT_CHUNK)
    return largest_fitting(peak, budget)


def variant_cache_capacity(
    variant: EngineVariant, geom: ModelGeometry, gpu: GpuSpec, user_mil: int
) -> int:
    """Prefix-cache tokens left after reserving room to serve user_mil.

    The profile-run analogue for every variant: reserve the variant's
    peak working set at the user-specified maximum length, and grant the
    rest of the (aggregate) device memory to prefix KV caches.
    """
    limit = variant_mil(variant, geom, gpu)
    if user_mil > limit:
        raise CapacityError(
            f"user_mil {user_mil} exceeds {variant.label} MIL {limit} "
            f"({geom.name} on {gpu.name})"
        )
    budget = gpu.total_memory * variant.gpu_count
    if variant.kind == "prefillonly":
        used = peak_prefill_memory(geom, user_mil, PrefillMode.hybrid(variant.chunk))
    elif variant.kind == "paged":
        used = peak_prefill_memory(geom, user_mil, PrefillMode.full())
    elif variant.kind == "chunked":
        used = peak_prefill_memory(geom, user_mil, PrefillMode.chunked(variant.chunk))
    elif variant.kind == "tp":
        used = peak_prefill_memory(geom, user_mil, PrefillMode.full())
    else:
        used = _pp_peak_bytes(geom, variant.degree, user_mil, DEFAULT_CHUNK)
    _, kv_total = kv_bytes_per_token(geom)
    return max(0, (budget - used) // kv_total)


def execute_time(
    variant: EngineVariant,
    geom: ModelGeometry,
    gpu: GpuSpec,
    params: CostParams,
    n_input: int,
    n_cached: int,
) -> float:
    """Service seconds for one request with n_cached prefix tokens resident."""
    if not 0 <= n_cached <= n_input:
        raise CostError(f"need 0 <= n_cached <= n_input, got ({n_input}, {n_cached})")
    mil = variant_mil(variant, geom, gpu)
    if n_input > mil:
        raise CapacityError(
            f"request of {n_input} tokens exceeds {variant.label} MIL {mil}"
        )
    miss = n_input - n_cached
    pairs = (n_input * n_input - n_cached * n_cached) / 2.0
    base = params.c_fixed + params.c_linear * miss + params.c_attn * pairs

    if variant.kind in ("prefillonly", "paged"):
        return base
    if variant.kind == "chunked":
        return (
            params.c_fixed
            + params.c_linear * miss
            + params.penalty(variant.chunk, n_input) * params.c_attn * pairs
        )
    if variant.kind == "tp":
        p = variant.degree
        comm = (
            geom.num_layers
            * 2.0
            * (params.comm_bytes_per_token_per_layer * miss)
            * (p - 1)
            / (p * gpu.link_bandwidth)
        )
        return params.c_fixed + (base - params.c_fixed) / p + comm
    # pp: same per-request latency as unparallelized; the simulator
    # applies the bubble-reduced serving rate via pp_occupancy
    return base


def pp_occupancy(variant: EngineVariant, params: CostParams, service: float) -> float:
    """Seconds of engine occupancy one request costs the instance."""
    if variant.kind != "pp":
        return service
    return service / (variant.degree * (1.0 - params.pp_bubble_fraction))


def native_policy_name(variant: EngineVariant) -> str:
    """Scheduling policy each engine runs by default."""
    return "srjf-calibrated" if variant.kind == "prefillonly" else "fifo"


def check_trace_servable(variant, geom, gpu, requests) -> None:
    """Raise CapacityError listing every request beyond the variant's MIL."""
    mil = variant_mil(variant, geom, gpu)
    offenders = [r.id for r in requests if r.n_input > mil]
    if offenders:
        raise CapacityError(
            f"{len(offenders)} request(s) exceed {variant.label} MIL {mil}: "
            f"ids {offenders[:10]}{'...' if len(offenders) > 10 else ''}",
            offenders=offenders,
        )


def saturation_throughput(
    variant: EngineVariant,
    geom: ModelGeometry,
    gpu: GpuSpec,
    params: CostParams,
    trace,
    total_gpus: int = 2,
) -> float:
    """Requests/second when the whole trace arrives at time zero.

    Runs the variant's native policy on total_gpus worth of hardware
    (one instance per GPU for single-device variants, one spanning
    instance for parallel ones).
    """
    from . import sim  # deferred: sim builds on this module

    return sim.saturation_throughput(variant, geom, gpu, params, trace, total_gpus)
