"""Command-line front end: synthesis, simulation, searches, verification,
and workload generation, with CSV series and rendered figures for the
report-producing paths."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Sequence

from . import fileio, verifier, workloads
from .model import ModelError, Policy, validate_policy
from .simulator import LinkProcess, SimulationError, degradation_sweep, run
from .synthesizer import (
    DEFAULT_SLOT_MS,
    SynthesisConfig,
    SynthesisStats,
    Unschedulable,
    capacity_search,
    max_flows_search,
    response_time,
    synthesize,
)

EXIT_OK = 0
EXIT_UNSCHEDULABLE = 1
EXIT_INPUT = 2


class CliError(Exception):
    """Input-level problem; maps to exit code 2."""


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def _config_from_args(args) -> SynthesisConfig:
    return SynthesisConfig(
        min_quality=args.m,
        service_cap=args.service_cap,
        active_cap=args.active_cap,
    )


def _add_synthesis_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--m", type=float, default=0.7,
                        help="minimum link quality threshold (default 0.7)")
    parser.add_argument("--service-cap", type=int, default=4,
                        help="max instances sharing one pull (default 4)")
    parser.add_argument("--active-cap", type=int, default=10,
                        help="max instances tracked per coordinator (default 10)")


def _parse_link_model(spec: str) -> LinkProcess:
    kind, _, rest = spec.partition(":")
    try:
        if kind == "constant":
            return LinkProcess.constant(float(rest))
        if kind == "uniform":
            lo, hi = rest.split(",")
            return LinkProcess.uniform(float(lo), float(hi))
        if kind == "trace":
            values = [float(line) for line in _read(rest).split()]
            return LinkProcess.trace(values)
    except (ValueError, SimulationError) as exc:
        raise CliError(f"bad link model {spec!r}: {exc}") from exc
    raise CliError(f"unknown link model kind {kind!r} "
                   "(use constant:Q, uniform:LO,HI, or trace:FILE)")


def _metrics_document(
    outcome: Policy | Unschedulable,
    topo,
    flows,
    stats: SynthesisStats,
    config: SynthesisConfig,
    slot_ms: float,
) -> dict:
    doc = {
        "schedulable": isinstance(outcome, Policy),
        "hyperperiod": stats.slots,
        "slot_ms": slot_ms,
        "config": {
            "min_quality": config.min_quality,
            "service_cap": config.service_cap,
            "active_cap": config.active_cap,
            "channels": topo.channel_count,
        },
        "flows": [],
        "timing": {
            "builder_s": stats.builder_seconds,
            "evaluator_s": stats.evaluator_seconds,
            "total_s": stats.total_seconds,
        },
    }
    if isinstance(outcome, Policy):
        doc["hyperperiod"] = outcome.hyperperiod
        releases = 0
        for f in sorted(flows, key=lambda f: f.id):
            recs = [r for r in outcome.analysis if r.flow == f.id]
            releases += len(recs)
            doc["flows"].append({
                "id": f.id,
                "period": f.period,
                "deadline": f.deadline,
                "target": f.target,
                "hops": f.hop_count,
                "end_to_end_bound": min(r.bound for r in recs),
                "response_time": response_time(outcome, f),
                "completion_slots": [r.completion_slot for r in recs],
            })
        doc["releases_per_hyperperiod"] = releases
        doc["packets_per_second"] = releases / (
            outcome.hyperperiod * slot_ms / 1000.0
        )
    else:
        doc["failure"] = {
            "flow": outcome.flow,
            "instance": outcome.k,
            "hop": outcome.hop,
            "slot": outcome.slot,
            "reason": outcome.reason,
        }
    return doc


def cmd_synthesize(args) -> int:
    topo, flows = fileio.load_workload(_read(args.workload))
    config = _config_from_args(args)
    stats = SynthesisStats()
    debug_sink = None
    dump_handle = None
    if args.dump_lp:
        dump_handle = open(args.dump_lp, "w", encoding="utf-8")
        debug_sink = dump_handle.write
    try:
        outcome = synthesize(topo, flows, config, stats=stats,
                             debug_sink=debug_sink)
    finally:
        if dump_handle:
            dump_handle.close()
    doc = _metrics_document(outcome, topo, flows, stats, config, args.slot_ms)
    metrics_path = args.metrics or (args.out + ".metrics.json")
    Path(metrics_path).write_text(fileio.dumps_metrics(doc), encoding="utf-8")
    if isinstance(outcome, Unschedulable):
        print(f"unschedulable: flow {outcome.flow} instance {outcome.k} "
              f"hop {outcome.hop} at slot {outcome.slot} ({outcome.reason})")
        print(f"metrics: {metrics_path}")
        return EXIT_UNSCHEDULABLE
    violations = validate_policy(outcome, topo, flows)
    if violations:
        for v in violations:
            print(f"violation [{v.rule}] slot {v.slot}: {v.detail}",
                  file=sys.stderr)
        return EXIT_UNSCHEDULABLE
    Path(args.out).write_text(fileio.dump_policy(outcome), encoding="utf-8")
    print(f"policy: {args.out} ({outcome.hyperperiod} slots, "
          f"{len(outcome.entries)} pulls)")
    print(f"metrics: {metrics_path}")
    print(f"timing: builder {stats.builder_seconds:.3f}s, "
          f"evaluator {stats.evaluator_seconds:.3f}s, "
          f"total {stats.total_seconds:.3f}s")
    return EXIT_OK


def _write_simulation_outputs(prefix: str, stats, policy, make_figure: bool):
    rows = []
    for flow, fs in sorted(stats.flows.items()):
        for w, pdr in enumerate(fs.window_pdr):
            rows.append((w, flow, pdr))
    fileio.write_csv(prefix + ".windows.csv", ("window", "flow", "pdr"), rows)
    doc = {
        "hyperperiods": stats.hyperperiods,
        "seed": stats.seed,
        "window": stats.window,
        "flows": [
            {
                "id": flow,
                "attempts": fs.attempts,
                "delivered": fs.delivered,
                "pdr": fs.pdr,
                "bound": fs.bound,
                "sigma": fs.sigma,
                "max_response": fs.max_response,
            }
            for flow, fs in sorted(stats.flows.items())
        ],
    }
    Path(prefix + ".stats.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written = [prefix + ".windows.csv", prefix + ".stats.json"]
    if make_figure:
        from .plotting import save_series_figure

        series = {
            f"flow {flow}": (list(range(len(fs.window_pdr))),
                             list(fs.window_pdr))
            for flow, fs in sorted(stats.flows.items())
        }
        hlines = {}
        bounds = [fs.bound for fs in stats.flows.values() if fs.bound]
        if bounds:
            hlines["predicted worst case"] = min(bounds)
        written.append(save_series_figure(
            prefix + ".windows.png", series, "window", "delivery ratio",
            "Per-window packet delivery ratio", hlines=hlines,
        ))
    return written


def cmd_simulate(args) -> int:
    topo, flows = fileio.load_workload(_read(args.workload))
    policy = fileio.load_policy(_read(args.policy))
    prefix = args.out_prefix
    if args.sweep:
        try:
            lo, hi, step = (float(x) for x in args.sweep.split(":"))
        except ValueError:
            raise CliError("--sweep expects LO:HI:STEP")
        grid = []
        q = lo
        while q <= hi + 1e-9:
            grid.append(round(q, 10))
            q += step
        points = degradation_sweep(policy, topo, flows, grid,
                                   args.hyperperiods, seed=args.seed)
        fileio.write_csv(prefix + ".sweep.csv", ("quality", "min_pdr"),
                         [(p.quality, p.min_pdr) for p in points])
        written = [prefix + ".sweep.csv"]
        if not args.no_figure:
            from .plotting import save_series_figure

            bounds = [r.bound for r in policy.analysis]
            hlines = {"predicted worst case": min(bounds)} if bounds else {}
            written.append(save_series_figure(
                prefix + ".sweep.png",
                {"min flow PDR": ([p.quality for p in points],
                                  [p.min_pdr for p in points])},
                "link quality", "delivery ratio",
                "Delivery ratio vs link quality", hlines=hlines,
            ))
        for p in points:
            print(f"q={p.quality:.2f} min_pdr={p.min_pdr:.5f}")
        print("wrote: " + " ".join(written))
        return EXIT_OK

    process = _parse_link_model(args.link_model)
    stats = run(policy, topo, flows, process, args.hyperperiods,
                seed=args.seed, window=args.window)
    written = _write_simulation_outputs(prefix, stats, policy,
                                        not args.no_figure)
    for flow, fs in sorted(stats.flows.items()):
        bound = f" bound={fs.bound:.5f}" if fs.bound is not None else ""
        print(f"flow {flow}: pdr={fs.pdr:.5f}{bound} "
              f"max_response={fs.max_response}")
    print("wrote: " + " ".join(written))
    return EXIT_OK


def cmd_capacity(args) -> int:
    topo, flows = fileio.load_workload(_read(args.workload))
    if not flows:
        print("capacity: 0.0 pkt/s (no flows)")
        return EXIT_OK
    config = _config_from_args(args)
    base = min(f.period for f in flows)

    def flows_for(period: int):
        return workloads.scale_periods(flows, base, period)

    periods = range(args.min_period, args.max_period + 1, args.step)
    result = capacity_search(topo, flows_for, config, periods,
                             slot_ms=args.slot_ms)
    prefix = args.out_prefix
    fileio.write_csv(prefix + ".capacity.csv", ("period", "schedulable"),
                     sorted(result.tested))
    doc = {
        "period": result.period,
        "releases_per_hyperperiod": result.releases_per_hyperperiod,
        "packets_per_second": result.packets_per_second,
        "slot_ms": args.slot_ms,
    }
    Path(prefix + ".capacity.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written = [prefix + ".capacity.csv", prefix + ".capacity.json"]
    if not args.no_figure:
        from .plotting import save_series_figure

        tested = sorted(result.tested)
        written.append(save_series_figure(
            prefix + ".capacity.png",
            {"schedulable": ([p for p, _ in tested],
                             [int(ok) for _, ok in tested])},
            "base period (slots)", "schedulable",
            "Schedulability over base periods",
        ))
    if result.period is None:
        print("no schedulable base period in the search range")
        return EXIT_UNSCHEDULABLE
    print(f"smallest schedulable base period: {result.period} slots")
    print(f"capacity: {result.packets_per_second:.2f} pkt/s "
          f"({result.releases_per_hyperperiod} releases per hyperperiod)")
    print("wrote: " + " ".join(written))
    return EXIT_OK


def cmd_maxflows(args) -> int:
    topo, flows = fileio.load_workload(_read(args.workload))
    flows = sorted(flows, key=lambda f: f.id)
    if args.service_caps:
        try:
            lo, hi = (int(x) for x in args.service_caps.split(":"))
        except ValueError:
            raise CliError("--service-caps expects LO:HI")
        rows = []
        for cap in range(lo, hi + 1):
            config = SynthesisConfig(min_quality=args.m, service_cap=cap,
                                     active_cap=args.active_cap)
            rows.append((cap, max_flows_search(topo, flows, config)))
            print(f"service_cap={cap}: max flows = {rows[-1][1]}")
        prefix = args.out_prefix
        fileio.write_csv(prefix + ".maxflows.csv",
                         ("service_cap", "max_flows"), rows)
        written = [prefix + ".maxflows.csv"]
        if not args.no_figure:
            from .plotting import save_series_figure

            written.append(save_series_figure(
                prefix + ".maxflows.png",
                {"max flows": ([r[0] for r in rows], [r[1] for r in rows])},
                "service list cap", "max flows scheduled",
                "Effect of slot sharing on schedulability",
            ))
        print("wrote: " + " ".join(written))
        return EXIT_OK
    config = _config_from_args(args)
    print(f"max flows = {max_flows_search(topo, flows, config)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = verifier.run_full_suite(
        seed=args.seed,
        order_width=args.order_width,
        decomposition_trials=args.decomposition_trials,
        safety_trials=args.safety_trials,
        optimality_trials=args.optimality_trials,
        monotonicity_trials=args.monotonicity_trials,
    )
    width = max(len(r.name) for r in reports)
    failed = False
    for r in reports:
        state = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {state}  ({r.trials} trials)")
        for ce in r.counterexamples[:5]:
            print(f"  counterexample: {ce}")
        failed = failed or not r.passed
    return EXIT_UNSCHEDULABLE if failed else EXIT_OK


def cmd_generate(args) -> int:
    kind, _, rest = args.topology.partition(":")
    try:
        if kind == "star":
            topo = workloads.star_topology(int(rest), channel_count=args.channels)
        elif kind == "mesh":
            bits = rest.split(":")
            n = int(bits[0])
            degree = float(bits[1]) if len(bits) > 1 else 5.0
            topo = workloads.mesh_topology(n, avg_degree=degree,
                                           seed=args.seed,
                                           channel_count=args.channels)
        else:
            raise CliError(f"unknown topology {args.topology!r} "
                           "(use star:N or mesh:N[:DEGREE])")
    except ValueError as exc:
        raise CliError(f"bad topology spec {args.topology!r}: {exc}") from exc
    if args.kind == "STAR":
        flows = workloads.star_flows(args.flows, period=args.base_period,
                                     target=args.target)
    else:
        flows = workloads.generate_workload(
            topo, args.kind, args.flows, base_period=args.base_period,
            target=args.target, seed=args.seed,
        )
    Path(args.out).write_text(fileio.dump_workload(topo, flows),
                              encoding="utf-8")
    print(f"workload: {args.out} ({len(topo.nodes)} nodes, "
          f"{len(flows)} flows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pullplan",
        description="Synthesize, verify, and simulate receiver-initiated "
                    "pull policies for multi-channel TDMA mesh networks.",
    )
    parser.add_argument("--config", help="key = value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="build a policy for a workload")
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True, help="policy output path")
    p.add_argument("--metrics", help="metrics path (default OUT.metrics.json)")
    p.add_argument("--slot-ms", type=float, default=DEFAULT_SLOT_MS)
    p.add_argument("--dump-lp", help="write per-slot constraint listings here")
    _add_synthesis_flags(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="replay a policy under a link model")
    p.add_argument("--policy", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--link-model", default="constant:0.7",
                   help="constant:Q | uniform:LO,HI | trace:FILE")
    p.add_argument("--hyperperiods", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=100,
                   help="window width in hyperperiods")
    p.add_argument("--out-prefix", default="simulation")
    p.add_argument("--sweep", help="degradation sweep LO:HI:STEP over "
                                   "constant link qualities")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("capacity", help="smallest schedulable base period")
    p.add_argument("--workload", required=True)
    p.add_argument("--max-period", type=int, required=True)
    p.add_argument("--min-period", type=int, default=1)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--slot-ms", type=float, default=DEFAULT_SLOT_MS)
    p.add_argument("--out-prefix", default="capacity")
    p.add_argument("--no-figure", action="store_true")
    _add_synthesis_flags(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("maxflows", help="largest schedulable flow prefix")
    p.add_argument("--workload", required=True)
    p.add_argument("--service-caps", help="sweep caps LO:HI instead")
    p.add_argument("--out-prefix", default="maxflows")
    p.add_argument("--no-figure", action="store_true")
    _add_synthesis_flags(p)
    p.set_defaults(func=cmd_maxflows)

    p = sub.add_parser("verify", help="run the property-check suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order-width", type=int, default=10)
    p.add_argument("--decomposition-trials", type=int, default=1000)
    p.add_argument("--safety-trials", type=int, default=10000)
    p.add_argument("--optimality-trials", type=int, default=1000)
    p.add_argument("--monotonicity-trials", type=int, default=1000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("generate", help="emit a workload file")
    p.add_argument("--topology", required=True, help="star:N or mesh:N[:DEG]")
    p.add_argument("--kind", required=True,
                   choices=[*workloads.WORKLOAD_KINDS, "STAR"],
                   help="experiment family (STAR = identical collection flows)")
    p.add_argument("--flows", type=int, required=True)
    p.add_argument("--base-period", type=int, required=True)
    p.add_argument("--target", type=float, default=0.99)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def _prescan_config(argv: list[str]) -> str | None:
    """Find and remove --config PATH, wherever it sits in the argv."""
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                raise CliError("--config needs a path")
            path = argv[i + 1]
            del argv[i:i + 2]
            return path
        if token.startswith("--config="):
            path = token.split("=", 1)[1]
            del argv[i:i + 1]
            return path
    return None


def _apply_config_defaults(parser: argparse.ArgumentParser,
                           values: dict[str, str]) -> None:
    """Config keys (flag names with underscores) become subcommand defaults;
    explicit flags still win."""
    sub = next(a for a in parser._actions
               if isinstance(a, argparse._SubParsersAction))
    matched: set[str] = set()
    for sp in sub.choices.values():
        defaults = {}
        for action in sp._actions:
            if action.dest not in values:
                continue
            matched.add(action.dest)
            raw = values[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = raw.lower() in ("1", "true", "yes")
            else:
                defaults[action.dest] = (action.type or str)(raw)
        sp.set_defaults(**defaults)
    unknown = set(values) - matched
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config_path = _prescan_config(argv)
        if config_path is not None:
            _apply_config_defaults(parser,
                                   fileio.load_config(_read(config_path)))
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, ModelError, SimulationError, fileio.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
