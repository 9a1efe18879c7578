"""Command-line front end: MIL tables, simulations, sweeps, numerics checks.

Exit codes: 0 success, 2 configuration error, 3 capacity error (some
request exceeds the variant's maximum input length), 4 I/O error.
Output files are written atomically, so a failing invocation never
leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import costs, jct, numerics, presets, sim, workload
from .geometry import BudgetError, GeometryError, PrefillMode, max_input_length
from .scheduling import Policy, SchedulingError
from .sim import SimError
from .workload import WorkloadError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_IO = 4

TRACES = {
    "post-rec": workload.gen_post_recommendation,
    "credit": workload.gen_credit_verification,
}


class _CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _write_output(out: str | None, text: str):
    if out is None:
        sys.stdout.write(text)
        return
    tmp = Path(f"{out}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, out)


def _add_common(p: _CliParser, with_sim_flags: bool = True):
    p.add_argument("--model", default="llama-3.1-8b", help="model preset name")
    p.add_argument("--gpu", default="l4", help="GPU preset name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    if with_sim_flags:
        p.add_argument("--trace", default="post-rec", choices=sorted(TRACES))
        p.add_argument(
            "--variant",
            default="prefillonly",
            help="prefillonly | paged | chunked[:CHUNK] | tp[:P] | pp[:P]",
        )
        p.add_argument(
            "--policy",
            default=None,
            choices=["fifo", "srjf", "srjf-calibrated"],
            help="default: the variant's native policy",
        )
        p.add_argument("--lambda", dest="lam", type=float, default=0.5)
        p.add_argument("--scoring", default="proxy", choices=["proxy", "profile"])
        p.add_argument(
            "--multipliers",
            default="0.25,0.5,1,2,3,4",
            help="comma-separated QPS multiples of saturation throughput",
        )
        p.add_argument("--instances", type=int, default=None,
                       help="default: 2 GPUs worth of instances")
        p.add_argument("--jct-profile", default=None,
                       help="profile file from fit-jct (otherwise fitted in-memory)")
        p.add_argument("--interleave-users", action="store_true",
                       help="shuffle requests individually instead of per-user bursts")


def _build_parser() -> _CliParser:
    parser = _CliParser(prog="prefillsim")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_CliParser)

    p_mil = sub.add_parser("mil",
                           help="max input length per mode, with workload feasibility")
    _add_common(p_mil, with_sim_flags=False)
    p_mil.add_argument("--mode", default="all",
                       choices=["all", *PrefillMode.ALL])

    p_simulate = sub.add_parser("simulate",
                                help="QPS sweep of one variant/policy, CSV out")
    _add_common(p_simulate)

    p_lambda = sub.add_parser("lambda-sweep",
                              help="vary the starvation offset at fixed QPS")
    _add_common(p_lambda)
    p_lambda.add_argument("--lambdas", default="0,0.5,5",
                          help="comma-separated lambda values")
    # the default fixture runs at 2x saturation with profile scoring, where
    # the starvation offset has dimensionally meaningful (seconds) effect
    p_lambda.set_defaults(multipliers="2", scoring="profile")

    p_verify = sub.add_parser("verify-numerics",
                              help="hybrid-vs-full equivalence and peak ratios")
    p_verify.add_argument("--seed", type=int, default=42)
    p_verify.add_argument("--out", default=None)

    p_fit = sub.add_parser("fit-jct",
                           help="fit the latency profile and write it to a file")
    _add_common(p_fit, with_sim_flags=False)
    p_fit.add_argument(
        "--variant",
        default="prefillonly",
        help="prefillonly | paged | chunked[:CHUNK] | tp[:P] | pp[:P]",
    )
    return parser


def _parse_multipliers(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise SchedulingError(f"bad multiplier list {text!r}") from exc
    if not values or any(v <= 0 for v in values):
        raise SchedulingError("multipliers must be positive")
    return values


def _fit_profile(variant, geom, gpu, params) -> jct.JctProfile:
    mil = costs.variant_mil(variant, geom, gpu)
    max_input = min(mil, 60_000)
    samples = jct.generate_samples(
        lambda n, nc: costs.execute_time(variant, geom, gpu, params, n, nc),
        max_input=max_input,
    )
    return jct.fit(samples)


def _load_setup(args):
    geom = presets.load_model(args.model)
    gpu = presets.load_gpu(args.gpu)
    params = costs.CostParams.derive(geom, gpu)
    return geom, gpu, params


def cmd_mil(args) -> int:
    geom, gpu, _ = _load_setup(args)
    modes = (
        [PrefillMode(m) for m in PrefillMode.ALL]
        if args.mode == "all"
        else [PrefillMode(args.mode)]
    )
    wl1 = workload.max_workload_request_len("post-rec", args.seed)
    wl2 = workload.max_workload_request_len("credit", args.seed)
    lines = [
        f"model={args.model} gpu={gpu.name} "
        f"(WL1 post-rec max {wl1} tokens, WL2 credit max {wl2} tokens)",
        f"{'mode':<12}{'MIL':>12}  {'WL1':<4}{'WL2':<4}",
    ]
    for mode in modes:
        mil = max_input_length(geom, gpu, mode)
        ok1 = "ok" if wl1 <= mil else "x"
        ok2 = "ok" if wl2 <= mil else "x"
        lines.append(f"{mode.kind:<12}{mil:>12}  {ok1:<4}{ok2:<4}")
    _write_output(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _sim_config(args, geom, gpu, params, variant) -> sim.SimConfig:
    policy_name = args.policy or costs.native_policy_name(variant)
    if policy_name == "fifo":
        policy = Policy.fifo()
    elif policy_name == "srjf":
        policy = Policy.srjf_static(scoring=args.scoring)
    else:
        policy = Policy.srjf_calibrated(lam=args.lam, scoring=args.scoring)
    profile = None
    if args.scoring == "profile":
        if args.jct_profile:
            profile = jct.load_profile(args.jct_profile)
        else:
            profile = _fit_profile(variant, geom, gpu, params)
    instances = args.instances
    if instances is None:
        instances = max(1, 2 // variant.gpu_count)
    return sim.SimConfig(
        geom=geom,
        gpu=gpu,
        cost_params=params,
        variant=variant,
        policy=policy,
        num_instances=instances,
        jct_profile=profile,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    geom, gpu, params = _load_setup(args)
    variant = costs.EngineVariant.parse(args.variant)
    config = _sim_config(args, geom, gpu, params, variant)
    trace = TRACES[args.trace](args.seed)
    multipliers = _parse_multipliers(args.multipliers)
    results = sim.sweep_qps(
        trace, config, multipliers, keep_sessions=not args.interleave_users
    )
    rows = [sim.CSV_HEADER]
    rows += [sim.csv_row(variant, config.policy, qps, rep) for qps, rep in results]
    _write_output(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_lambda_sweep(args) -> int:
    geom, gpu, params = _load_setup(args)
    variant = costs.EngineVariant.parse(args.variant)
    if (args.policy or "srjf-calibrated") != "srjf-calibrated":
        raise SchedulingError("lambda-sweep applies to the srjf-calibrated policy")
    args.policy = "srjf-calibrated"
    try:
        lambdas = [float(v) for v in args.lambdas.split(",") if v.strip()]
    except ValueError as exc:
        raise SchedulingError(f"bad lambda list {args.lambdas!r}") from exc
    if not lambdas or any(v < 0 for v in lambdas):
        raise SchedulingError("lambdas must be nonnegative")
    multipliers = _parse_multipliers(args.multipliers)
    if len(multipliers) != 1:
        raise SchedulingError("lambda-sweep takes exactly one QPS multiplier")
    trace = TRACES[args.trace](args.seed)

    rows = [sim.CSV_HEADER]
    base_config = _sim_config(args, geom, gpu, params, variant)
    x = sim.config_saturation_throughput(trace, base_config)
    qps = multipliers[0] * x
    arrived = workload.poisson_arrivals(
        trace, qps, seed=args.seed, keep_sessions=not args.interleave_users
    )
    for lam in lambdas:
        policy = Policy.srjf_calibrated(lam=lam, scoring=args.scoring)
        config = sim.SimConfig(
            geom=geom,
            gpu=gpu,
            cost_params=params,
            variant=variant,
            policy=policy,
            num_instances=base_config.num_instances,
            jct_profile=base_config.jct_profile,
            seed=args.seed,
        )
        report = sim.run(arrived, config)
        rows.append(sim.csv_row(variant, policy, qps, report))
    _write_output(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_verify_numerics(args) -> int:
    import numpy as np

    n, hidden, inter = 64, 16, 64
    params = numerics.ToyBlockParams.random(args.seed, hidden, inter)
    x = numerics.random_input(args.seed, n, hidden)
    full_tracker = numerics.ScratchTracker()
    ref = numerics.block_forward_full(params, x, full_tracker)
    ref_norm = float(np.linalg.norm(ref))

    rows = ["chunk,max_rel_error,peak_ratio_prealloc_inplace,peak_ratio_prealloc,peak_ratio_plain"]
    for chunk in (1, 2, 4, 8, 16, 32, 64):
        ratios = []
        err = 0.0
        for prealloc, inplace in ((True, True), (True, False), (False, False)):
            tracker = numerics.ScratchTracker()
            out = numerics.block_forward_hybrid(
                params, x.copy(), chunk, tracker, prealloc=prealloc, inplace=inplace
            )
            err = max(err, float(np.linalg.norm(out - ref)) / ref_norm)
            ratios.append(numerics.peak_ratio(full_tracker, tracker))
        rows.append(
            f"{chunk},{err:.3e},{ratios[0]:.4f},{ratios[1]:.4f},{ratios[2]:.4f}"
        )
    _write_output(args.out, "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_fit_jct(args) -> int:
    geom, gpu, params = _load_setup(args)
    variant = costs.EngineVariant.parse(args.variant)
    profile = _fit_profile(variant, geom, gpu, params)
    if args.out is None:
        raise SchedulingError("fit-jct requires --out")
    tmp = Path(f"{args.out}.tmp")
    jct.save_profile(profile, tmp)
    os.replace(tmp, args.out)
    return EXIT_OK


_COMMANDS = {
    "mil": cmd_mil,
    "simulate": cmd_simulate,
    "lambda-sweep": cmd_lambda_sweep,
    "verify-numerics": cmd_verify_numerics,
    "fit-jct": cmd_fit_jct,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except costs.CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (
        presets.PresetError,
        GeometryError,
        BudgetError,
        costs.CostError,
        SchedulingError,
        SimError,
        WorkloadError,
        jct.FitError,
        numerics.NumericsError,
    ) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
