"""Domain types for topologies, periodic flows, pull actions, and policies.

All types are immutable values; they can be shared freely across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

DEFAULT_CHANNEL_COUNT = 16
DEFAULT_SERVICE_CAP = 4
DEFAULT_ACTIVE_CAP = 10

# Hyperperiods are slot counts; keep them inside a 64-bit counter.
MAX_SLOT_COUNT = 2**63 - 1


class ModelError(ValueError):
    """Raised when a domain value violates its invariants."""


@dataclass(frozen=True)
class Topology:
    """Directed mesh graph with a base station and a channel budget."""

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    base_station: str
    channel_count: int = DEFAULT_CHANNEL_COUNT

    def __post_init__(self) -> None:
        if self.base_station not in self.nodes:
            raise ModelError(f"base station {self.base_station!r} not a node")
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise ModelError(f"edge ({a!r}, {b!r}) has an unknown endpoint")
            if a == b:
                raise ModelError(f"self-loop at {a!r}")
        # A coordinator must always be able to hop off its previous channel.
        if self.channel_count < 2:
            raise ModelError("channel_count must be at least 2")

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self.edges


@dataclass(frozen=True)
class FlowSpec:
    """Periodic real-time flow with a fixed forwarding path.

    ``id`` doubles as the static priority: lower values are served first.
    ``target`` is the end-to-end delivery probability the flow must meet.
    """

    id: int
    phase: int
    period: int
    deadline: int
    target: float
    path: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ModelError("flow id must be non-negative")
        if self.period < 1:
            raise ModelError(f"flow {self.id}: period must be positive")
        if not 0 < self.deadline <= self.period:
            raise ModelError(f"flow {self.id}: need 0 < deadline <= period")
        if self.phase < 0 or self.phase + self.deadline > self.period:
            # Keeps every instance inside one hyperperiod; see docs/formats.md.
            raise ModelError(f"flow {self.id}: need phase + deadline <= period")
        if not 0.0 < self.target < 1.0:
            raise ModelError(f"flow {self.id}: target must be in (0, 1)")
        if len(self.path) < 2:
            raise ModelError(f"flow {self.id}: path needs at least two nodes")
        if len(set(self.path)) != len(self.path):
            raise ModelError(f"flow {self.id}: path revisits a node")

    @property
    def hop_count(self) -> int:
        return len(self.path) - 1

    @property
    def local_target(self) -> float:
        """Per-hop reliability whose product over all hops meets ``target``."""
        return self.target ** (1.0 / self.hop_count)

    def release(self, k: int) -> int:
        return self.phase + k * self.period

    def abs_deadline(self, k: int) -> int:
        return self.release(k) + self.deadline

    def link(self, hop: int) -> tuple[str, str]:
        if not 0 <= hop < self.hop_count:
            raise ModelError(f"flow {self.id}: hop {hop} out of range")
        return self.path[hop], self.path[hop + 1]

    def instance(self, k: int, hop: int = 0) -> FlowInstance:
        src, dst = self.link(hop)
        return FlowInstance(
            flow=self.id,
            k=k,
            hop=hop,
            release=self.release(k),
            deadline=self.abs_deadline(k),
            src=src,
            dst=dst,
            local_target=self.local_target,
        )


@dataclass(frozen=True)
class FlowInstance:
    """One released job of a flow, pinned to its currently active hop.

    ``release``/``deadline`` are the job's, not the hop's: a hop instance
    becomes serviceable only once the previous hop met the local target,
    which the synthesizer tracks separately.
    """

    flow: int
    k: int
    hop: int
    release: int
    deadline: int
    src: str
    dst: str
    local_target: float


@dataclass(frozen=True)
class Pull:
    """Receiver-initiated action: a coordinator plus a priority-ordered
    service list of candidate instances, on one channel."""

    coordinator: str
    services: tuple[FlowInstance, ...]
    channel: int

    def __post_init__(self) -> None:
        if not self.services:
            raise ModelError("empty service list")
        if self.channel < 0:
            raise ModelError("negative channel")
        flows = [inst.flow for inst in self.services]
        if any(a >= b for a, b in zip(flows, flows[1:])):
            raise ModelError("service list not in strict priority order")
        for inst in self.services:
            if inst.dst != self.coordinator:
                raise ModelError(
                    f"instance of flow {inst.flow} not destined to coordinator "
                    f"{self.coordinator!r}"
                )

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(inst.src for inst in self.services)


@dataclass(frozen=True)
class ServiceRef:
    """(flow, instance index, hop) triple naming a serviced subflow."""

    flow: int
    k: int
    hop: int


@dataclass(frozen=True)
class PolicyEntry:
    """One pull scheduled at (slot, channel)."""

    slot: int
    channel: int
    coordinator: str
    services: tuple[ServiceRef, ...]


@dataclass(frozen=True)
class HopRecord:
    """Analysis record of one hop: where it completed and the bound history.

    ``trajectory`` lists (slot, bound) after every slot the hop was serviced.
    """

    flow: int
    k: int
    hop: int
    src: str
    dst: str
    completion_slot: int
    bound: float
    trajectory: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class InstanceRecord:
    """Per-instance analysis outcome embedded in a policy."""

    flow: int
    k: int
    release: int
    deadline: int
    completion_slot: int
    bound: float
    hops: tuple[HopRecord, ...]


@dataclass(frozen=True)
class Policy:
    """Channels x hyperperiod grid of pulls plus per-instance analysis."""

    hyperperiod: int
    channel_count: int
    min_quality: float
    service_cap: int
    active_cap: int
    entries: tuple[PolicyEntry, ...]
    analysis: tuple[InstanceRecord, ...] = ()

    def entries_at(self, slot: int) -> list[PolicyEntry]:
        return [e for e in self.entries if e.slot == slot]

    def record_for(self, flow: int, k: int) -> InstanceRecord | None:
        for rec in self.analysis:
            if rec.flow == flow and rec.k == k:
                return rec
        return None


@dataclass(frozen=True)
class Violation:
    """One well-formedness breach found by validate_policy."""

    rule: str
    slot: int
    channel: int | None
    nodes: tuple[str, ...]
    detail: str


def hyperperiod(flows: list[FlowSpec]) -> int:
    """Least common multiple of all flow periods, in slots."""
    if not flows:
        raise ModelError("no flows")
    h = math.lcm(*(f.period for f in flows))
    if h > MAX_SLOT_COUNT:
        raise ModelError(f"hyperperiod {h} overflows the slot counter")
    return h


def validate_workload(topo: Topology, flows: list[FlowSpec]) -> None:
    """Check flows against the topology; raises ModelError on the first issue."""
    seen: set[int] = set()
    for f in flows:
        if f.id in seen:
            raise ModelError(f"duplicate flow priority {f.id}")
        seen.add(f.id)
        for node in f.path:
            if node not in topo.nodes:
                raise ModelError(f"flow {f.id}: unknown node {node!r}")
        for hop in range(f.hop_count):
            a, b = f.link(hop)
            if not topo.has_edge(a, b):
                raise ModelError(f"flow {f.id}: ({a!r}, {b!r}) is not an edge")


def _flow_map(flows: list[FlowSpec]) -> dict[int, FlowSpec]:
    return {f.id: f for f in flows}


def validate_policy(
    policy: Policy, topo: Topology, flows: list[FlowSpec]
) -> list[Violation]:
    """Check the five well-formedness rules; returns one record per breach.

    Rules: transmission conflicts (``node-conflict``), hop precedence
    (``hop-precedence``), per-coordinator channel hopping (``channel-hop``),
    one pull per channel and slot (``channel-clash``), and deadlines plus
    end-to-end reliability (``deadline-reliability``).  ``pull-shape`` flags
    malformed entries that the other rules cannot interpret.
    """
    out: list[Violation] = []
    specs = _flow_map(flows)

    def bad(rule: str, slot: int, channel: int | None, nodes: tuple[str, ...],
            detail: str) -> None:
        out.append(Violation(rule, slot, channel, nodes, detail))

    # Shape checks first; entries that fail them are skipped below.
    usable: list[tuple[PolicyEntry, list[tuple[ServiceRef, str, str]]]] = []
    for e in policy.entries:
        ok = True
        if not 0 <= e.slot < policy.hyperperiod or not 0 <= e.channel < policy.channel_count:
            bad("pull-shape", e.slot, e.channel, (e.coordinator,),
                "slot or channel out of range")
            ok = False
        if not e.services or len(e.services) > policy.service_cap:
            bad("pull-shape", e.slot, e.channel, (e.coordinator,),
                f"service list size {len(e.services)} outside 1..{policy.service_cap}")
            ok = False
        prio = [s.flow for s in e.services]
        if any(a >= b for a, b in zip(prio, prio[1:])):
            bad("pull-shape", e.slot, e.channel, (e.coordinator,),
                "service list not in strict priority order")
            ok = False
        links: list[tuple[ServiceRef, str, str]] = []
        for ref in e.services:
            spec = specs.get(ref.flow)
            if spec is None or not 0 <= ref.hop < spec.hop_count:
                bad("pull-shape", e.slot, e.channel, (e.coordinator,),
                    f"unknown flow {ref.flow} or hop {ref.hop}")
                ok = False
                continue
            src, dst = spec.link(ref.hop)
            if dst != e.coordinator:
                bad("pull-shape", e.slot, e.channel, (e.coordinator,),
                    f"flow {ref.flow} hop {ref.hop} is not received by "
                    f"{e.coordinator!r}")
                ok = False
                continue
            links.append((ref, src, dst))
        if ok:
            usable.append((e, links))

    by_slot: dict[int, list[tuple[PolicyEntry, list[tuple[ServiceRef, str, str]]]]] = {}
    for e, links in usable:
        by_slot.setdefault(e.slot, []).append((e, links))

    # Rule: at most one pull per (slot, channel).
    seen_cells: set[tuple[int, int]] = set()
    for e, _ in usable:
        cell = (e.slot, e.channel)
        if cell in seen_cells:
            bad("channel-clash", e.slot, e.channel, (e.coordinator,),
                "two pulls share one slot/channel cell")
        seen_cells.add(cell)

    # Rule: no node sends or receives more than once per slot.  Within a
    # single pull a shared source is fine (at most one instance executes);
    # across pulls it is a conflict, as is coordinating twice or being both
    # a coordinator and a source.
    for slot, cell_entries in sorted(by_slot.items()):
        coords: dict[str, int] = {}
        src_owner: dict[str, tuple[str, int]] = {}
        all_srcs: set[str] = set()
        for e, links in cell_entries:
            if e.coordinator in coords:
                bad("node-conflict", slot, e.channel, (e.coordinator,),
                    "node coordinates two pulls in one slot")
            coords[e.coordinator] = e.channel
            for _ref, src, _dst in links:
                all_srcs.add(src)
                owner = src_owner.get(src)
                if owner is not None and owner[0] != e.coordinator:
                    bad("node-conflict", slot, e.channel, (src,),
                        f"source {src!r} serviced by two pulls "
                        f"(coordinators {owner[0]!r} and {e.coordinator!r})")
                else:
                    src_owner[src] = (e.coordinator, e.channel)
        for node in sorted(all_srcs & set(coords)):
            bad("node-conflict", slot, coords[node], (node,),
                f"node {node!r} is both a coordinator and a serviced source")

    # Rule: a coordinator must switch channels between consecutive slots.
    last_by_coord: dict[str, tuple[int, int]] = {}
    for e, _ in sorted(usable, key=lambda p: (p[0].slot, p[0].channel)):
        prev = last_by_coord.get(e.coordinator)
        if prev is not None and prev[0] == e.slot - 1 and prev[1] == e.channel:
            bad("channel-hop", e.slot, e.channel, (e.coordinator,),
                f"coordinator {e.coordinator!r} reuses channel {e.channel} "
                "in consecutive slots")
        last_by_coord[e.coordinator] = (e.slot, e.channel)

    # Rule: hop h+1 may only be pulled strictly after hop h met its local
    # target, per the analysis records.
    completions: dict[tuple[int, int, int], int] = {}
    for rec in policy.analysis:
        for h in rec.hops:
            completions[(h.flow, h.k, h.hop)] = h.completion_slot
    for e, links in usable:
        for ref, _src, _dst in links:
            if ref.hop == 0:
                continue
            done = completions.get((ref.flow, ref.k, ref.hop - 1))
            if done is None:
                bad("hop-precedence", e.slot, e.channel, (e.coordinator,),
                    f"no completion record for flow {ref.flow} hop {ref.hop - 1}")
            elif e.slot <= done:
                bad("hop-precedence", e.slot, e.channel, (e.coordinator,),
                    f"flow {ref.flow} hop {ref.hop} pulled at slot {e.slot}, "
                    f"but hop {ref.hop - 1} completed only at slot {done}")

    # Rule: every instance completes before its deadline and meets its
    # end-to-end target.  The completing pull must lie in a slot that ends
    # by the deadline instant, i.e. completion_slot <= deadline - 1.
    recorded: set[tuple[int, int]] = set()
    for rec in policy.analysis:
        recorded.add((rec.flow, rec.k))
        spec = specs.get(rec.flow)
        if spec is None:
            bad("deadline-reliability", rec.completion_slot, None, (),
                f"analysis names unknown flow {rec.flow}")
            continue
        if rec.completion_slot >= rec.deadline:
            bad("deadline-reliability", rec.completion_slot, None,
                (spec.path[-1],),
                f"flow {rec.flow} instance {rec.k} completes at slot "
                f"{rec.completion_slot}, deadline {rec.deadline}")
        if rec.bound < spec.target:
            bad("deadline-reliability", rec.completion_slot, None,
                (spec.path[-1],),
                f"flow {rec.flow} instance {rec.k} bound {rec.bound:.6g} "
                f"below target {spec.target:.6g}")
    for f in flows:
        for k in range(policy.hyperperiod // f.period):
            if (f.id, k) not in recorded:
                bad("deadline-reliability", f.release(k), None, (f.path[-1],),
                    f"flow {f.id} instance {k} has no analysis record")

    return out
