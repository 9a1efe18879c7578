"""Deterministic discrete-event simulator for prefill-only serving.

N engine instances, sticky user-id routing assigned round-robin, one
waiting queue + prefix cache per instance, and at most one request in
service per instance (pipeline parallelism overlaps requests at the
bubble-reduced rate but keeps per-request latency). A request's KV
enters its instance's cache at completion time, and completions at a
given timestamp are processed before arrivals, so freshly finished KV
is visible to a simultaneous scheduling step.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

from .cache import CacheConfig, PrefixCache
from .costs import (
    CapacityError,
    CostParams,
    EngineVariant,
    check_trace_servable,
    execute_time,
    native_policy_name,
    pp_occupancy,
    variant_cache_capacity,
)
from .geometry import GpuSpec, ModelGeometry
from .jct import JctProfile
from .scheduling import (
    POLICY_SRJF,
    POLICY_SRJF_CALIBRATED,
    SCORING_PROFILE,
    Policy,
    SchedulingError,
    WaitingRequest,
    estimate_jct,
    schedule_next,
)
from .workload import Trace

_EV_COMPLETE = 0
_EV_FREE = 1
_EV_ARRIVE = 2


class SimError(ValueError):
    """Invalid simulation configuration or trace."""


@dataclass
class Router:
    """Sticky user->instance assignment, handed out round-robin."""

    num_instances: int
    assignments: dict = field(default_factory=dict)
    next_rr: int = 0

    def route(self, request) -> int:
        instance = self.assignments.get(request.user_id)
        if instance is None:
            instance = self.next_rr % self.num_instances
            self.assignments[request.user_id] = instance
            self.next_rr += 1
        return instance


def route(request, assignments: dict, next_rr: int, num_instances: int) -> tuple[int, int]:
    """Functional form of Router.route: returns (instance, next_rr)."""
    instance = assignments.get(request.user_id)
    if instance is None:
        instance = next_rr % num_instances
        assignments[request.user_id] = instance
        next_rr += 1
    return instance, next_rr


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulation run needs besides the trace."""

    geom: ModelGeometry
    gpu: GpuSpec
    cost_params: CostParams
    variant: EngineVariant
    policy: Policy
    num_instances: int = 1
    block_tokens: int = 16
    cache_capacity_tokens: int | None = None  # None: derive from user_mil
    user_mil: int | None = None  # None: longest request in the trace
    jct_profile: JctProfile | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_instances < 1:
            raise SimError("num_instances must be >= 1")


@dataclass(frozen=True)
class RequestRecord:
    """Per-request outcome of one run."""

    id: int
    user_id: int
    instance: int
    arrival: float
    start: float
    completion: float
    n_input: int
    n_cached: int

    @property
    def latency(self) -> float:
        return self.completion - self.arrival

    @property
    def service(self) -> float:
        return self.completion - self.start


@dataclass(frozen=True)
class SimReport:
    """Latency/throughput/cache metrics of one run."""

    records: tuple[RequestRecord, ...]
    mean_latency: float
    p99_latency: float
    throughput: float
    cache_hit_tokens: int
    cache_hit_requests: int
    per_instance_utilization: tuple[float, ...]
    makespan: float

    @property
    def served(self) -> int:
        return len(self.records)

    @property
    def utilization(self) -> float:
        if not self.per_instance_utilization:
            return 0.0
        return sum(self.per_instance_utilization) / len(self.per_instance_utilization)


def p99_nearest_rank(latencies) -> float:
    if not latencies:
        return 0.0
    ordered = sorted(latencies)
    rank = math.ceil(0.99 * len(ordered))
    return ordered[max(0, rank - 1)]


@dataclass
class _Instance:
    cache: PrefixCache
    queue: list = field(default_factory=list)
    busy: bool = False
    busy_time: float = 0.0


def run(trace: Trace, config: SimConfig) -> SimReport:
    """Simulate the trace to completion and collect metrics."""
    requests = trace.requests
    arrivals = [r.arrival for r in requests]
    if any(b < a for a, b in zip(arrivals, arrivals[1:])):
        raise SimError("trace arrivals must be nondecreasing")
    check_trace_servable(config.variant, config.geom, config.gpu, requests)

    policy = config.policy
    needs_profile = (
        policy.kind in (POLICY_SRJF, POLICY_SRJF_CALIBRATED)
        and policy.scoring == SCORING_PROFILE
    )
    if needs_profile and config.jct_profile is None:
        raise SchedulingError("profile scoring requires SimConfig.jct_profile")

    if not requests:
        return SimReport(
            records=(),
            mean_latency=0.0,
            p99_latency=0.0,
            throughput=0.0,
            cache_hit_tokens=0,
            cache_hit_requests=0,
            per_instance_utilization=(0.0,) * config.num_instances,
            makespan=0.0,
        )

    capacity = config.cache_capacity_tokens
    if capacity is None:
        user_mil = config.user_mil or trace.max_request_len
        capacity = variant_cache_capacity(
            config.variant, config.geom, config.gpu, user_mil
        )
    cache_config = CacheConfig(capacity_tokens=capacity, block_tokens=config.block_tokens)

    instances = [PrefixCache(cache_config) for _ in range(config.num_instances)]
    instances = [_Instance(cache=c) for c in instances]
    router = Router(num_instances=config.num_instances)
    profile_chain_memo: dict = {}

    events: list[tuple] = []
    seq = 0
    for r in requests:
        heapq.heappush(events, (r.arrival, _EV_ARRIVE, seq, r))
        seq += 1

    records: list[RequestRecord] = []

    def start_next(idx: int, now: float):
        nonlocal seq
        inst = instances[idx]
        wr = schedule_next(inst.queue, inst.cache, config.jct_profile, policy, now)
        inst.queue.remove(wr)
        n_cached = inst.cache.match_chain(wr.chain)
        service = execute_time(
            config.variant, config.geom, config.gpu, config.cost_params,
            wr.request.n_input, n_cached,
        )
        occupancy = pp_occupancy(config.variant, config.cost_params, service)
        inst.busy = True
        inst.busy_time += occupancy
        heapq.heappush(events, (now + occupancy, _EV_FREE, seq, idx))
        seq += 1
        heapq.heappush(
            events, (now + service, _EV_COMPLETE, seq, (idx, wr, n_cached, now))
        )
        seq += 1

    while events:
        now, kind, _, payload = heapq.heappop(events)
        if kind == _EV_ARRIVE:
            r = payload
            idx = router.route(r)
            inst = instances[idx]
            chain = r.digest_chain(config.block_tokens, profile_chain_memo)
            wr = WaitingRequest(request=r, arrival=now, chain=chain)
            if policy.kind == POLICY_SRJF:
                wr.frozen_jct = estimate_jct(
                    r.n_input,
                    inst.cache.match_chain(chain),
                    policy.scoring,
                    config.jct_profile,
                )
            inst.queue.append(wr)
            if not inst.busy:
                start_next(idx, now)
        elif kind == _EV_FREE:
            idx = payload
            inst = instances[idx]
            inst.busy = False
            if inst.queue:
                start_next(idx, now)
        else:  # _EV_COMPLETE
            idx, wr, n_cached, started = payload
            instances[idx].cache.insert_chain(wr.chain, now)
            records.append(
                RequestRecord(
                    id=wr.request.id,
                    user_id=wr.request.user_id,
                    instance=idx,
                    arrival=wr.arrival,
                    start=started,
                    completion=now,
                    n_input=wr.request.n_input,
                    n_cached=n_cached,
                )
            )

    assert len(records) == len(requests), "conservation violated"
    latencies = [rec.latency for rec in records]
    first_arrival = min(r.arrival for r in requests)
    makespan = max(rec.completion for rec in records) - first_arrival
    throughput = len(records) / makespan if makespan > 0 else 0.0
    return SimReport(
        records=tuple(records),
        mean_latency=sum(latencies) / len(latencies),
        p99_latency=p99_nearest_rank(latencies),
        throughput=throughput,
        cache_hit_tokens=sum(rec.n_cached for rec in records),
        cache_hit_requests=sum(1 for rec in records if rec.n_cached > 0),
        per_instance_utilization=tuple(
            (inst.busy_time / makespan if makespan > 0 else 0.0) for inst in instances
        ),
        makespan=makespan,
    )


def _zero_arrival(trace: Trace) -> Trace:
    return Trace(
        name=trace.name,
        seed=trace.seed,
        requests=tuple(replace(r, arrival=0.0) for r in trace.requests),
    )


def saturation_throughput(
    variant: EngineVariant,
    geom: ModelGeometry,
    gpu: GpuSpec,
    params: CostParams,
    trace: Trace,
    total_gpus: int = 2,
) -> float:
    """Throughput with the whole trace arriving at once, native policy."""
    num_instances = max(1, total_gpus // variant.gpu_count)
    policy_name = native_policy_name(variant)
    policy = (
        Policy.srjf_calibrated() if policy_name == "srjf-calibrated" else Policy.fifo()
    )
    config = SimConfig(
        geom=geom,
        gpu=gpu,
        cost_params=params,
        variant=variant,
        policy=policy,
        num_instances=num_instances,
    )
    return run(_zero_arrival(trace), config).throughput


def config_saturation_throughput(trace: Trace, config: SimConfig) -> float:
    """Saturation throughput at this config's instance count, native policy."""
    policy_name = native_policy_name(config.variant)
    policy = (
        Policy.srjf_calibrated() if policy_name == "srjf-calibrated" else Policy.fifo()
    )
    return run(_zero_arrival(trace), replace(config, policy=policy)).throughput


DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 3.0, 4.0)


def sweep_qps(
    trace: Trace,
    config: SimConfig,
    multipliers=DEFAULT_MULTIPLIERS,
    keep_sessions: bool = True,
) -> list[tuple[float, SimReport]]:
    """Run the trace at each multiple of its saturation throughput."""
    from .workload import poisson_arrivals

    if any(m <= 0 for m in multipliers):
        raise SimError("multipliers must be positive")
    x = config_saturation_throughput(trace, config)
    results = []
    for m in multipliers:
        qps = m * x
        arrived = poisson_arrivals(trace, qps, seed=config.seed, keep_sessions=keep_sessions)
        results.append((qps, run(arrived, config)))
    return results


CSV_HEADER = (
    "variant,policy,lambda,qps,mean_latency_s,p99_latency_s,throughput_rps,"
    "cache_hit_requests,cache_hit_tokens,utilization"
)


def csv_row(variant: EngineVariant, policy: Policy, qps: float, report: SimReport) -> str:
    return ",".join(
        [
            variant.label,
            policy.kind,
            f"{policy.lam:g}",
            f"{qps:.6f}",
            f"{report.mean_latency:.6f}",
            f"{report.p99_latency:.6f}",
            f"{report.throughput:.6f}",
            str(report.cache_hit_requests),
            str(report.cache_hit_tokens),
            f"{report.utilization:.6f}",
        ]
    )
