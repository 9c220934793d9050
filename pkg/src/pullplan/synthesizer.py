"""Slot-by-slot policy synthesis plus the capacity search drivers.

Each slot alternates two phases: the builder selects pulls from the
currently active instances, then the evaluator applies them with every link
quality pinned to the minimum m, retires instances that met their local
target, and releases successor hops.  Synthesis either yields a policy whose
analytic bounds meet every deadline and reliability target, or an
unschedulable verdict naming the first failing instance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .builder import SlotProblem, format_slot_debug, solve_slot, to_pulls
from .evaluator import (
    CoordinatorState,
    LinkQualityView,
    end_to_end_bound,
    release_next_subflow,
)
from .model import (
    DEFAULT_ACTIVE_CAP,
    DEFAULT_SERVICE_CAP,
    FlowInstance,
    FlowSpec,
    HopRecord,
    InstanceRecord,
    ModelError,
    Policy,
    PolicyEntry,
    ServiceRef,
    Topology,
    hyperperiod,
    validate_workload,
)

DEFAULT_SLOT_MS = 10.0


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs of the synthesis procedure."""

    min_quality: float = 0.7
    service_cap: int = DEFAULT_SERVICE_CAP
    active_cap: int = DEFAULT_ACTIVE_CAP

    def __post_init__(self) -> None:
        if not 0.0 < self.min_quality <= 1.0:
            raise ModelError("min_quality must be in (0, 1]")
        if self.service_cap < 1 or self.active_cap < 1:
            raise ModelError("caps must be positive")


@dataclass(frozen=True)
class Unschedulable:
    """Verdict naming the first instance that cannot meet its deadline."""

    flow: int
    k: int
    hop: int
    slot: int
    reason: str


@dataclass
class SynthesisStats:
    """Wall-clock split of one synthesis run, filled in by synthesize()."""

    builder_seconds: float = 0.0
    evaluator_seconds: float = 0.0
    total_seconds: float = 0.0
    slots: int = 0


class _HopProgress:
    __slots__ = ("trajectory", "completion_slot", "bound")

    def __init__(self) -> None:
        self.trajectory: list[tuple[int, float]] = []
        self.completion_slot: int | None = None
        self.bound: float | None = None


def synthesize(
    topo: Topology,
    flows: Sequence[FlowSpec],
    config: SynthesisConfig = SynthesisConfig(),
    *,
    stats: SynthesisStats | None = None,
    debug_sink: Callable[[str], None] | None = None,
) -> Policy | Unschedulable:
    """Build a policy over one hyperperiod, or report why none exists."""
    flows = list(flows)
    validate_workload(topo, flows)
    horizon = hyperperiod(flows)
    specs = {f.id: f for f in flows}
    worst_case = LinkQualityView(floor=config.min_quality)

    started = time.perf_counter()
    builder_s = 0.0
    evaluator_s = 0.0

    def fill_stats() -> None:
        if stats is not None:
            stats.builder_seconds = builder_s
            stats.evaluator_seconds = evaluator_s
            stats.total_seconds = time.perf_counter() - started
            stats.slots = horizon

    states: dict[str, CoordinatorState] = {}
    last_channels: dict[str, int] = {}
    # Incomplete jobs: (flow, k) -> absolute deadline, plus per-hop progress.
    open_jobs: dict[tuple[int, int], int] = {}
    progress: dict[tuple[int, int], list[_HopProgress]] = {}
    pending: dict[int, list[FlowInstance]] = {}
    entries: list[PolicyEntry] = []

    for f in flows:
        for k in range(horizon // f.period):
            pending.setdefault(f.release(k), []).append(f.instance(k, 0))
            open_jobs[(f.id, k)] = f.abs_deadline(k)
            progress[(f.id, k)] = [_HopProgress() for _ in range(f.hop_count)]

    def first_failure() -> Unschedulable:
        flow, k = min(open_jobs, key=lambda fk: (open_jobs[fk], fk))
        hop = next(
            h for h, p in enumerate(progress[(flow, k)])
            if p.completion_slot is None
        )
        return Unschedulable(
            flow=flow, k=k, hop=hop, slot=open_jobs[(flow, k)],
            reason=f"hop {hop} below its local target at the deadline",
        )

    def state_of(node: str) -> CoordinatorState:
        if node not in states:
            states[node] = CoordinatorState(node, config.active_cap)
        return states[node]

    for t in range(horizon):
        if any(d <= t for d in open_jobs.values()):
            fill_stats()
            return first_failure()
        for inst in sorted(pending.pop(t, ()), key=lambda i: i.flow):
            state_of(inst.dst).admit(inst)

        candidates = tuple(
            inst
            for node in sorted(states)
            for inst in states[node].active
        )

        t0 = time.perf_counter()
        problem = SlotProblem(
            candidates=candidates,
            last_channels=dict(last_channels),
            channel_count=topo.channel_count,
            service_cap=config.service_cap,
        )
        assignment = solve_slot(problem)
        pulls = to_pulls(assignment, problem)
        builder_s += time.perf_counter() - t0
        if debug_sink is not None:
            debug_sink(format_slot_debug(problem, assignment, t))

        t0 = time.perf_counter()
        for pull in pulls:
            state = states[pull.coordinator]
            state.apply_pull(pull, worst_case)
            last_channels[pull.coordinator] = pull.channel
            for inst in pull.services:
                progress[(inst.flow, inst.k)][inst.hop].trajectory.append(
                    (t, state.marginal(inst))
                )
            entries.append(
                PolicyEntry(
                    slot=t,
                    channel=pull.channel,
                    coordinator=pull.coordinator,
                    services=tuple(
                        ServiceRef(i.flow, i.k, i.hop) for i in pull.services
                    ),
                )
            )

        for node in sorted(states):
            state = states[node]
            for inst in list(state.active):
                if state.marginal(inst) < inst.local_target:
                    continue
                hp = progress[(inst.flow, inst.k)][inst.hop]
                hp.completion_slot = t
                hp.bound = state.marginal(inst)
                state.retire(inst)
                succ = release_next_subflow(specs[inst.flow], inst.k, inst.hop, t)
                if succ is None:
                    del open_jobs[(inst.flow, inst.k)]
                else:
                    nxt, at = succ
                    pending.setdefault(at, []).append(nxt)
        evaluator_s += time.perf_counter() - t0

    if open_jobs:
        fill_stats()
        return first_failure()

    analysis: list[InstanceRecord] = []
    for f in flows:
        for k in range(horizon // f.period):
            hops = []
            for h, hp in enumerate(progress[(f.id, k)]):
                src, dst = f.link(h)
                hops.append(
                    HopRecord(
                        flow=f.id, k=k, hop=h, src=src, dst=dst,
                        completion_slot=hp.completion_slot,  # type: ignore[arg-type]
                        bound=hp.bound,  # type: ignore[arg-type]
                        trajectory=tuple(hp.trajectory),
                    )
                )
            analysis.append(
                InstanceRecord(
                    flow=f.id, k=k, release=f.release(k),
                    deadline=f.abs_deadline(k),
                    completion_slot=hops[-1].completion_slot,
                    bound=end_to_end_bound([h.bound for h in hops]),
                    hops=tuple(hops),
                )
            )

    fill_stats()
    return Policy(
        hyperperiod=horizon,
        channel_count=topo.channel_count,
        min_quality=config.min_quality,
        service_cap=config.service_cap,
        active_cap=config.active_cap,
        entries=tuple(sorted(entries, key=lambda e: (e.slot, e.channel))),
        analysis=tuple(analysis),
    )


def response_time(policy: Policy, flow: FlowSpec) -> int:
    """Worst latency of the flow's instances: completion - release + 1 slots."""
    worst = 0
    found = False
    for rec in policy.analysis:
        if rec.flow == flow.id:
            worst = max(worst, rec.completion_slot - rec.release + 1)
            found = True
    if not found:
        raise ModelError(f"policy has no analysis for flow {flow.id}")
    return worst


def max_flows_search(
    topo: Topology,
    flows_in_priority_order: Sequence[FlowSpec],
    config: SynthesisConfig = SynthesisConfig(),
) -> int:
    """Largest prefix of the priority-ordered flow list that is schedulable."""
    supported = 0
    for n in range(1, len(flows_in_priority_order) + 1):
        outcome = synthesize(topo, flows_in_priority_order[:n], config)
        if isinstance(outcome, Unschedulable):
            break
        supported = n
    return supported


@dataclass(frozen=True)
class CapacityResult:
    """Outcome of a real-time capacity search."""

    period: int | None
    releases_per_hyperperiod: int
    packets_per_second: float
    tested: tuple[tuple[int, bool], ...]


def capacity_search(
    topo: Topology,
    flows_for_period: Callable[[int], Sequence[FlowSpec]],
    config: SynthesisConfig,
    periods: Iterable[int],
    slot_ms: float = DEFAULT_SLOT_MS,
    refine: bool = True,
) -> CapacityResult:
    """Smallest schedulable base period over a descending period scan.

    ``periods`` is scanned in descending order; once the first unschedulable
    period is found the gap to the last schedulable one is bisected (when
    ``refine``).  Capacity is releases per hyperperiod over the hyperperiod
    duration.
    """

    def schedulable(period: int) -> bool:
        flows = list(flows_for_period(period))
        if not flows:
            return False
        return not isinstance(synthesize(topo, flows, config), Unschedulable)

    tested: list[tuple[int, bool]] = []
    best: int | None = None
    floor_bound: int | None = None
    for period in sorted(set(periods), reverse=True):
        ok = schedulable(period)
        tested.append((period, ok))
        if ok:
            best = period
        else:
            floor_bound = period
            break

    if refine and best is not None and floor_bound is not None:
        lo, hi = floor_bound, best
        while hi - lo > 1:
            mid = (lo + hi) // 2
            ok = schedulable(mid)
            tested.append((mid, ok))
            if ok:
                hi = mid
            else:
                lo = mid
        best = hi

    if best is None:
        return CapacityResult(None, 0, 0.0, tuple(tested))
    flows = list(flows_for_period(best))
    horizon = hyperperiod(flows)
    releases = sum(horizon // f.period for f in flows)
    return CapacityResult(
        period=best,
        releases_per_hyperperiod=releases,
        packets_per_second=releases / (horizon * slot_ms / 1000.0),
        tested=tuple(tested),
    )
