"""Byte arithmetic over transformer shapes.

Everything here is closed-form: KV-cache bytes per token, the dominant
intermediate-tensor spike of the MLP, peak prefill memory under the four
execution modes, the maximum input length (MIL) a memory budget admits,
and the leftover space available for prefix KV caches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_CHUNK = 8192
VALID_DTYPE_BYTES = (1, 2, 4)


class GeometryError(ValueError):
    """Invalid model/GPU description."""


class BudgetError(ValueError):
    """Memory budget too small to hold the model at all."""


@dataclass(frozen=True)
class ModelGeometry:
    """Transformer shape constants that drive all byte arithmetic."""

    name: str
    num_layers: int
    hidden_size: int
    num_kv_heads: int
    head_dim: int
    intermediate_size: int
    weight_bytes: int
    kv_dtype_bytes: int = 2
    act_dtype_bytes: int = 2
    # Multiplier covering temporaries concurrent with the gate/up spike.
    # Committed per preset by calibrating MIL against known full-KV values
    # (see presets/*.preset and the README calibration notes).
    act_overhead_factor: float = 3.5

    def __post_init__(self):
        counts = (
            self.num_layers,
            self.hidden_size,
            self.num_kv_heads,
            self.head_dim,
            self.intermediate_size,
            self.weight_bytes,
        )
        if any(c <= 0 for c in counts):
            raise GeometryError(f"{self.name}: all shape counts must be positive")
        if self.kv_dtype_bytes not in VALID_DTYPE_BYTES:
            raise GeometryError(f"{self.name}: kv_dtype_bytes must be one of {VALID_DTYPE_BYTES}")
        if self.act_dtype_bytes not in VALID_DTYPE_BYTES:
            raise GeometryError(f"{self.name}: act_dtype_bytes must be one of {VALID_DTYPE_BYTES}")
        if self.intermediate_size < self.hidden_size:
            raise GeometryError(f"{self.name}: intermediate_size < hidden_size")
        if self.act_overhead_factor < 1.0:
            raise GeometryError(f"{self.name}: act_overhead_factor must be >= 1")


@dataclass(frozen=True)
class GpuSpec:
    """Memory budget and rate knobs of one simulated device."""

    name: str
    total_memory: int
    linear_rate: float  # effective FLOP/s for dense linear work
    attn_rate: float  # effective FLOP/s for attention score/value work
    fixed_overhead: float  # seconds of per-request overhead
    link_bandwidth: float  # bytes/s between devices
    has_nvlink: bool = False

    def __post_init__(self):
        if self.total_memory <= 0:
            raise GeometryError(f"{self.name}: total_memory must be positive")
        if min(self.linear_rate, self.attn_rate, self.link_bandwidth) <= 0:
            raise GeometryError(f"{self.name}: all rates must be positive")
        if self.fixed_overhead < 0:
            raise GeometryError(f"{self.name}: fixed_overhead must be >= 0")


class PrefillMode:
    """Execution mode selector for peak-memory accounting.

    Full keeps every layer's KV plus full-length activations; KvDiscard
    keeps only the active layer's KV; Chunked bounds activations by the
    chunk but retains all layers' KV between chunks; Hybrid bounds the
    activations by the chunk while keeping one layer's KV.
    """

    FULL = "full"
    KV_DISCARD = "kv-discard"
    CHUNKED = "chunked"
    HYBRID = "hybrid"

    ALL = (FULL, KV_DISCARD, CHUNKED, HYBRID)

    def __init__(self, kind: str, chunk_size: int | None = None):
        if kind not in self.ALL:
            raise GeometryError(f"unknown prefill mode {kind!r}")
        if kind in (self.CHUNKED, self.HYBRID):
            chunk_size = DEFAULT_CHUNK if chunk_size is None else chunk_size
            if chunk_size <= 0:
                raise GeometryError("chunk_size must be positive")
        else:
            if chunk_size is not None:
                raise GeometryError(f"mode {kind!r} takes no chunk size")
        self.kind = kind
        self.chunk_size = chunk_size

    @classmethod
    def full(cls) -> "PrefillMode":
        return cls(cls.FULL)

    @classmethod
    def kv_discard(cls) -> "PrefillMode":
        return cls(cls.KV_DISCARD)

    @classmethod
    def chunked(cls, chunk_size: int = DEFAULT_CHUNK) -> "PrefillMode":
        return cls(cls.CHUNKED, chunk_size)

    @classmethod
    def hybrid(cls, chunk_size: int = DEFAULT_CHUNK) -> "PrefillMode":
        return cls(cls.HYBRID, chunk_size)

    def __repr__(self):
        if self.chunk_size is not None:
            return f"PrefillMode({self.kind!r}, chunk_size={self.chunk_size})"
        return f"PrefillMode({self.kind!r})"

    def __eq__(self, other):
        return (
            isinstance(other, PrefillMode)
            and self.kind == other.kind
            and self.chunk_size == other.chunk_size
        )

    def __hash__(self):
        return hash((self.kind, self.chunk_size))


def kv_bytes_per_token(geom: ModelGeometry) -> tuple[int, int]:
    """Return (per-layer, all-layer) KV-cache bytes for one token."""
    per_layer = 2 * geom.num_kv_heads * geom.head_dim * geom.kv_dtype_bytes
    return per_layer, per_layer * geom.num_layers


def intermediate_bytes_per_token(geom: ModelGeometry) -> int:
    """Bytes of the concatenated gate/up projection output for one token.

    This is the dominant per-token activation spike of the MLP: the gate
    and up projections each emit intermediate_size scalars.
    """
    return 2 * geom.intermediate_size * geom.act_dtype_bytes


def peak_prefill_memory(geom: ModelGeometry, n_tokens: int, mode: PrefillMode) -> int:
    """Peak bytes needed to prefill n_tokens under the given mode."""
    if n_tokens <= 0:
        raise GeometryError("n_tokens must be positive")
    kv_layer, kv_total = kv_bytes_per_token(geom)
    spike = geom.act_overhead_factor * intermediate_bytes_per_token(geom)

    if mode.kind == PrefillMode.FULL:
        kv_term = kv_total * n_tokens
        act_term = spike * n_tokens
    elif mode.kind == PrefillMode.KV_DISCARD:
        kv_term = kv_layer * n_tokens
        act_term = spike * n_tokens
    elif mode.kind == PrefillMode.CHUNKED:
        # KV of all previous chunks stays resident between chunks.
        kv_term = kv_total * n_tokens
        act_term = spike * min(n_tokens, mode.chunk_size)
    else:  # hybrid
        kv_term = kv_layer * n_tokens
        act_term = spike * min(n_tokens, mode.chunk_size)

    return geom.weight_bytes + kv_term + math.ceil(act_term)


def largest_fitting(peak_fn, budget: int) -> int:
    """Largest n >= 0 with peak_fn(n) <= budget, for nondecreasing peak_fn."""
    if peak_fn(1) > budget:
        return 0
    lo, hi = 1, 2
    while peak_fn(hi) <= budget:
        lo, hi = hi, hi * 2
    # invariant: peak(lo) fits, peak(hi) does not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if peak_fn(mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def max_input_length(geom: ModelGeometry, gpu: GpuSpec, mode: PrefillMode) -> int:
    """Largest n with peak_prefill_memory(n) within the GPU budget; 0 if none."""
    if gpu.total_memory < geom.weight_bytes:
        raise BudgetError(
            f"{gpu.name}: budget {gpu.total_memory} B is below "
            f"{geom.name} weights {geom.weight_bytes} B"
        )
    return largest_fitting(
        lambda n: peak_prefill_memory(geom, n, mode), gpu.total_memory
    )


def prefix_cache_capacity(geom: ModelGeometry, gpu: GpuSpec, user_mil: int) -> int:
    """Tokens of prefix KV cache that fit after reserving room for user_mil.

    Mirrors a profile run: forward one maximum-length request in hybrid
    mode, and hand whatever memory remains to the prefix cache.
    """
    hybrid = PrefillMode.hybrid()
    limit = max_input_length(geom, gpu, hybrid)
    if user_mil > limit:
        raise BudgetError(
            f"user_mil {user_mil} exceeds hybrid MIL {limit} "
            f"for {geom.name} on {gpu.name}"
        )
    _, kv_total = kv_bytes_per_token(geom)
    free = gpu.total_memory - peak_prefill_memory(geom, user_mil, hybrid)
    return max(0, free // kv_total)
