"""Analytical memory model and discrete-event simulator for prefill-only LLM serving."""

from .cache import CacheConfig, PrefixCache, block_chain
from .costs import (
    CapacityError,
    CostParams,
    EngineVariant,
    execute_time,
    saturation_throughput,
    variant_cache_capacity,
    variant_mil,
)
from .geometry import (
    GpuSpec,
    ModelGeometry,
    PrefillMode,
    intermediate_bytes_per_token,
    kv_bytes_per_token,
    max_input_length,
    peak_prefill_memory,
    prefix_cache_capacity,
)
from .jct import JctProfile, JctSample, fit, get_jct, pearson, proxy_miss
from .numerics import (
    ScratchTracker,
    ToyBlockParams,
    block_forward_full,
    block_forward_hybrid,
    peak_ratio,
)
from .presets import load_gpu, load_model
from .scheduling import Policy, WaitingRequest, schedule_next, score
from .sim import SimConfig, SimReport, run, sweep_qps
from .workload import (
    Request,
    Trace,
    gen_credit_verification,
    gen_post_recommendation,
    poisson_arrivals,
    worked_example,
)

__version__ = "0.1.0"
