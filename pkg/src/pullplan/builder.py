"""Per-slot pull selection: coordinators, service lists, and channels.

The per-slot optimisation maximises a power-of-two priority objective over
0/1 selection variables subject to transmission-conflict and channel
constraints.  That objective is exactly lexicographic maximisation, so it is
solved by a greedy pass in priority order with feasibility propagation; the
equivalence is pinned by an exhaustive-enumeration property test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .model import DEFAULT_SERVICE_CAP, FlowInstance, ModelError, Pull


@dataclass(frozen=True)
class SlotProblem:
    """Candidate instances plus the channel context of one slot.

    ``last_channels`` maps a node to the channel of its most recent pull;
    a coordinator may not reuse it.
    """

    candidates: tuple[FlowInstance, ...]
    last_channels: Mapping[str, int] = field(default_factory=dict)
    channel_count: int = 16
    service_cap: int = DEFAULT_SERVICE_CAP

    def __post_init__(self) -> None:
        prios = [c.flow for c in self.candidates]
        if len(set(prios)) != len(prios):
            raise ModelError("candidate priorities must be unique")
        for c in self.candidates:
            if c.src == c.dst:
                raise ModelError(f"flow {c.flow}: src equals dst")
        if self.service_cap < 1 or self.channel_count < 2:
            raise ModelError("bad service_cap or channel_count")


@dataclass(frozen=True)
class SlotAssignment:
    """Chosen instances, their coordinators, and an injective channel map."""

    selected: tuple[FlowInstance, ...]
    coordinators: tuple[str, ...]
    channels: dict[str, int]


def assign_channels(
    coordinators: Sequence[str],
    last_channels: Mapping[str, int],
    channel_count: int,
) -> dict[str, int] | None:
    """Injective coordinator->channel map avoiding each last-used channel.

    Augmenting-path bipartite matching; returns None when no matching
    exists (the caller then drops the lowest-priority coordinator).
    """
    owner: dict[int, str] = {}
    assigned: dict[str, int] = {}

    def try_place(node: str, visited: set[int]) -> bool:
        banned = last_channels.get(node)
        for ch in range(channel_count):
            if ch == banned or ch in visited:
                continue
            visited.add(ch)
            holder = owner.get(ch)
            if holder is None or try_place(holder, visited):
                owner[ch] = node
                assigned[node] = ch
                return True
        return False

    for node in coordinators:
        if not try_place(node, set()):
            return None
    return assigned


def _conflicts(a: FlowInstance, b: FlowInstance) -> bool:
    """Transmission conflict between two selected instances.

    Same source is allowed only within one pull (same destination); any
    node acting as both a sender and a receiver is a conflict.
    """
    if a.src == b.src and a.dst != b.dst:
        return True
    if a.src == b.dst or b.src == a.dst:
        return True
    return False


def _set_feasible(chosen: Sequence[FlowInstance], problem: SlotProblem) -> bool:
    n = len(chosen)
    for i in range(n):
        for j in range(i + 1, n):
            if _conflicts(chosen[i], chosen[j]):
                return False
    per_coord: dict[str, int] = {}
    for inst in chosen:
        per_coord[inst.dst] = per_coord.get(inst.dst, 0) + 1
        if per_coord[inst.dst] > problem.service_cap:
            return False
    coords = list(dict.fromkeys(inst.dst for inst in chosen))
    if not coords:
        return True
    return assign_channels(coords, problem.last_channels, problem.channel_count) is not None


def solve_slot(problem: SlotProblem) -> SlotAssignment:
    """Lexicographic-priority optimal selection for one slot.

    Visits candidates in priority order and keeps each one iff the partial
    selection stays feasible: no node both sends and receives, no source
    transmits in two pulls, service lists within cap, and the coordinator
    set still admits a hopping-compliant channel matching.
    """
    selected: list[FlowInstance] = []
    coords: list[str] = []
    for inst in sorted(problem.candidates, key=lambda c: c.flow):
        if any(_conflicts(inst, s) for s in selected):
            continue
        if sum(1 for s in selected if s.dst == inst.dst) >= problem.service_cap:
            continue
        if inst.dst not in coords:
            trial = coords + [inst.dst]
            if assign_channels(trial, problem.last_channels,
                               problem.channel_count) is None:
                continue
            coords = trial
        selected.append(inst)
    channels = assign_channels(coords, problem.last_channels,
                               problem.channel_count)
    assert channels is not None
    return SlotAssignment(tuple(selected), tuple(coords), channels)


def to_pulls(assignment: SlotAssignment, problem: SlotProblem) -> tuple[Pull, ...]:
    """One pull per coordinator: its selected instances in priority order."""
    by_coord: dict[str, list[FlowInstance]] = {c: [] for c in assignment.coordinators}
    for inst in assignment.selected:
        by_coord[inst.dst].append(inst)
    pulls = [
        Pull(coordinator=c, services=tuple(insts), channel=assignment.channels[c])
        for c, insts in by_coord.items()
        if insts
    ]
    return tuple(sorted(pulls, key=lambda p: p.channel))


def format_slot_debug(problem: SlotProblem, assignment: SlotAssignment,
                      slot: int) -> str:
    """Plain-text LP-style listing of one slot's constraint system."""
    lines = [f"slot {slot}"]
    lines.append("  variables:")
    nodes = sorted({c.src for c in problem.candidates}
                   | {c.dst for c in problem.candidates})
    for node in nodes:
        val = 1 if node in assignment.coordinators else 0
        lines.append(f"    N[{node}] = {val}")
    for c in problem.candidates:
        val = 1 if c in assignment.selected else 0
        lines.append(f"    I[f{c.flow},k{c.k},h{c.hop}] = {val}  "
                     f"link {c.src}->{c.dst}")
    lines.append("  constraints:")
    for c in problem.candidates:
        lines.append(f"    N[{c.src}] <= 1 - I[f{c.flow},k{c.k},h{c.hop}]")
        lines.append(f"    I[f{c.flow},k{c.k},h{c.hop}] <= N[{c.dst}]")
    cands = list(problem.candidates)
    for i, a in enumerate(cands):
        for b in cands[i + 1:]:
            if a.src == b.src and a.dst != b.dst:
                lines.append(f"    I[f{a.flow}] + I[f{b.flow}] - 1 <= N[{a.src}]")
    lines.append(f"    per-coordinator service list <= {problem.service_cap}")
    lines.append(f"    injective channels over {problem.channel_count}, "
                 "hopping off last-used")
    lines.append("  solution:")
    for coord in assignment.coordinators:
        ch = assignment.channels[coord]
        insts = [f"f{i.flow}" for i in assignment.selected if i.dst == coord]
        lines.append(f"    pull<{coord}, [{', '.join(insts)}], ch {ch}>")
    if not assignment.coordinators:
        lines.append("    (empty)")
    return "\n".join(lines) + "\n"
