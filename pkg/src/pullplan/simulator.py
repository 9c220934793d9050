"""Slot-level stochastic replay of policies under threshold link processes.

A pull's request/response round trip consumes a single Bernoulli draw.  A
successful round trip always marks the instance executed at the coordinator;
the response carries the real payload only if the neighbour held it,
otherwise a dropped marker, which counts as an end-to-end loss.

Draws come from one counter-based stream per (link, slot-in-hyperperiod)
keyed by the master seed, with the i-th draw of a stream belonging to
hyperperiod i: replays of disjoint hyperperiod blocks reproduce the exact
same outcomes.  ``run`` executes all hyperperiods as one vectorised pass;
``run_reference`` is the scalar run-time state machine kept as a semantic
oracle for the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import FlowSpec, ModelError, Policy, Pull, ServiceRef, Topology

Link = tuple[str, str]

_KEY_SALT = 0x9E3779B97F4A7C15


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class LinkProcess:
    """Per-slot link quality process.

    Kinds: ``constant`` (fixed quality, also used below the threshold for
    degradation studies), ``uniform`` (fresh draw in [lo, hi] per link and
    slot), and ``trace`` (explicit per-slot qualities, cycled over the
    hyperperiod and applied to every link).
    """

    kind: str
    lo: float = 0.0
    hi: float = 0.0
    values: tuple[float, ...] = ()

    @classmethod
    def constant(cls, quality: float) -> "LinkProcess":
        if not 0.0 < quality <= 1.0:
            raise SimulationError(f"quality {quality} outside (0, 1]")
        return cls(kind="constant", lo=quality, hi=quality)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "LinkProcess":
        if not 0.0 < lo <= hi <= 1.0:
            raise SimulationError(f"uniform bounds [{lo}, {hi}] invalid")
        return cls(kind="uniform", lo=lo, hi=hi)

    @classmethod
    def trace(cls, values: Sequence[float]) -> "LinkProcess":
        vals = tuple(float(v) for v in values)
        if not vals or any(not 0.0 < v <= 1.0 for v in vals):
            raise SimulationError("trace values must lie in (0, 1]")
        return cls(kind="trace", values=vals)

    def quality_at(self, slot: int) -> float:
        if self.kind == "constant":
            return self.lo
        if self.kind == "trace":
            return self.values[slot % len(self.values)]
        raise SimulationError("per-slot quality of a uniform process is random")


def _stream(seed: int, link_id: int, slot: int) -> np.random.Generator:
    """Counter-based stream dedicated to one (link, slot) cell."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, _KEY_SALT], dtype=np.uint64)
    counter = np.array([0, 0, link_id, slot], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _cell_draws(
    seed: int, link_id: int, slot: int, process: LinkProcess, n: int
):
    """Quality and success-threshold draws for one (link, slot) cell.

    Returns (quality, uniforms): quality is a scalar for constant/trace
    processes and an (n,) vector for uniform ones.
    """
    gen = _stream(seed, link_id, slot)
    if process.kind == "uniform":
        q = process.lo + (process.hi - process.lo) * gen.random(n)
    else:
        q = process.quality_at(slot)
    return q, gen.random(n)


@dataclass
class _CompiledPolicy:
    tasks: dict[tuple[int, int, int], int]
    links: dict[Link, int]
    link_of_task: list[int]
    prev_task: list[int]
    final_task: dict[tuple[int, int], int]
    releases: dict[tuple[int, int], int]
    # Per policy entry: (slot, channel, coordinator, [(task, link_id)]).
    entries: list[tuple[int, int, str, list[tuple[int, int]]]]


def _compile(policy: Policy, flows: Sequence[FlowSpec],
             topo: Topology | None = None) -> _CompiledPolicy:
    specs = {f.id: f for f in flows}
    tasks: dict[tuple[int, int, int], int] = {}
    links: dict[Link, int] = {}
    link_of_task: list[int] = []
    prev_task: list[int] = []
    entries: list[tuple[int, int, str, list[tuple[int, int]]]] = []

    def task_id(ref: ServiceRef) -> int:
        key = (ref.flow, ref.k, ref.hop)
        if key not in tasks:
            spec = specs.get(ref.flow)
            if spec is None:
                raise SimulationError(f"policy services unknown flow {ref.flow}")
            link = spec.link(ref.hop)
            if topo is not None and not topo.has_edge(*link):
                raise SimulationError(f"{link} is not an edge of the topology")
            tasks[key] = len(link_of_task)
            link_of_task.append(links.setdefault(link, len(links)))
            prev_task.append(-1)
        return tasks[key]

    # Register every serviced subflow, then resolve predecessor links.
    for e in sorted(policy.entries, key=lambda e: (e.slot, e.channel)):
        cands = [(task_id(ref), link_of_task[task_id(ref)]) for ref in e.services]
        entries.append((e.slot, e.channel, e.coordinator, cands))
    for (flow, k, hop), tid in tasks.items():
        if hop > 0:
            prev = tasks.get((flow, k, hop - 1))
            if prev is None:
                raise SimulationError(
                    f"flow {flow} instance {k} hop {hop} is serviced but "
                    f"hop {hop - 1} never is"
                )
            prev_task[tid] = prev

    # Replaying a policy must never let a node both send and receive in a
    # slot, for any run-time branch: check the candidate sets statically.
    by_slot: dict[int, list[tuple[str, list[str]]]] = {}
    for e in sorted(policy.entries, key=lambda e: (e.slot, e.channel)):
        srcs = [specs[r.flow].link(r.hop)[0] for r in e.services]
        by_slot.setdefault(e.slot, []).append((e.coordinator, srcs))
    for slot, cells in by_slot.items():
        receivers = [c for c, _ in cells]
        if len(set(receivers)) != len(receivers):
            raise SimulationError(f"slot {slot}: node coordinates twice")
        sender_owner: dict[str, str] = {}
        for coord, srcs in cells:
            for s in srcs:
                if s in receivers:
                    raise SimulationError(
                        f"slot {slot}: {s!r} would send and receive"
                    )
                if sender_owner.setdefault(s, coord) != coord:
                    raise SimulationError(
                        f"slot {slot}: {s!r} serviced by two pulls"
                    )

    final_task: dict[tuple[int, int], int] = {}
    releases: dict[tuple[int, int], int] = {}
    for (flow, k, hop), tid in tasks.items():
        spec = specs[flow]
        if hop == spec.hop_count - 1:
            final_task[(flow, k)] = tid
        releases[(flow, k)] = spec.release(k)
    return _CompiledPolicy(tasks, links, link_of_task, prev_task,
                           final_task, releases, entries)


@dataclass
class FlowStats:
    """Empirical per-flow outcome of a simulation."""

    flow: int
    attempts: int
    delivered: int
    pdr: float
    bound: float | None
    max_response: int | None
    window_pdr: tuple[float, ...]

    @property
    def sigma(self) -> float:
        """Binomial standard error referenced to the analytic bound."""
        p = self.bound if self.bound is not None else self.pdr
        return float(np.sqrt(max(p * (1.0 - p), 0.0) / self.attempts))


@dataclass
class RunStats:
    """Aggregate outcome of simulating ``hyperperiods`` policy cycles."""

    hyperperiods: int
    seed: int
    window: int
    flows: dict[int, FlowStats] = field(default_factory=dict)

    @property
    def min_pdr(self) -> float:
        return min(fs.pdr for fs in self.flows.values())


def _resolve_processes(
    processes: LinkProcess | Mapping[Link, LinkProcess],
    links: Mapping[Link, int],
) -> dict[int, LinkProcess]:
    if isinstance(processes, LinkProcess):
        return {lid: processes for lid in links.values()}
    out = {}
    for link, lid in links.items():
        if link not in processes:
            raise SimulationError(f"no link process for {link}")
        out[lid] = processes[link]
    return out


def run(
    policy: Policy,
    topo: Topology,
    flows: Sequence[FlowSpec],
    processes: LinkProcess | Mapping[Link, LinkProcess],
    hyperperiods: int,
    seed: int = 0,
    window: int = 100,
) -> RunStats:
    """Vectorised execution of ``hyperperiods`` cycles of the policy."""
    if hyperperiods < 1:
        raise SimulationError("need at least one hyperperiod")
    comp = _compile(policy, flows, topo)
    by_link = _resolve_processes(processes, comp.links)
    n = hyperperiods
    n_tasks = len(comp.link_of_task)
    executed = np.zeros((n_tasks, n), dtype=bool)
    payload = np.zeros((n_tasks, n), dtype=bool)
    final_tids = set(comp.final_task.values())
    delivery_slot = {tid: np.full(n, -1, dtype=np.int32) for tid in final_tids}

    for slot, _channel, _coord, cands in comp.entries:
        cell: dict[int, tuple] = {}
        gate = np.ones(n, dtype=bool)
        updates = []
        for tid, lid in cands:
            if lid not in cell:
                cell[lid] = _cell_draws(seed, lid, slot, by_link[lid], n)
            q, u = cell[lid]
            attempted = gate & ~executed[tid]
            gate &= executed[tid]
            success = attempted & (u < q)
            prev = comp.prev_task[tid]
            with_payload = success if prev < 0 else success & payload[prev]
            updates.append((tid, success, with_payload))
        for tid, success, with_payload in updates:
            executed[tid] |= success
            payload[tid] |= with_payload
            if tid in delivery_slot:
                delivery_slot[tid][with_payload] = slot

    stats = RunStats(hyperperiods=n, seed=seed, window=window)
    jobs_by_flow: dict[int, list[tuple[int, int]]] = {}
    for (flow, k) in comp.final_task:
        jobs_by_flow.setdefault(flow, []).append((flow, k))
    specs = {f.id: f for f in flows}
    bounds = {
        (rec.flow, rec.k): rec.bound for rec in policy.analysis
    }
    for flow, jobs in sorted(jobs_by_flow.items()):
        jobs.sort()
        delivered_rows = np.stack(
            [payload[comp.final_task[job]] for job in jobs]
        )
        attempts = delivered_rows.size
        delivered = int(delivered_rows.sum())
        max_resp = None
        for job in jobs:
            ds = delivery_slot[comp.final_task[job]]
            got = ds >= 0
            if got.any():
                resp = int(ds[got].max()) - comp.releases[job] + 1
                max_resp = resp if max_resp is None else max(max_resp, resp)
        n_windows = n // window
        series = []
        if n_windows:
            trimmed = delivered_rows[:, : n_windows * window]
            per_window = trimmed.reshape(len(jobs), n_windows, window)
            series = list(per_window.sum(axis=(0, 2)) / (len(jobs) * window))
        flow_bound = min(
            (bounds[job] for job in jobs if job in bounds), default=None
        )
        stats.flows[flow] = FlowStats(
            flow=flow,
            attempts=attempts,
            delivered=delivered,
            pdr=delivered / attempts,
            bound=flow_bound,
            max_response=max_resp,
            window_pdr=tuple(float(x) for x in series),
        )
    for f in specs.values():
        if f.id not in stats.flows:
            raise SimulationError(f"flow {f.id} never serviced by the policy")
    return stats


@dataclass
class NodeState:
    """Run-time state of one node in the scalar reference machine."""

    packets: dict[tuple[int, int], bool] = field(default_factory=dict)
    executed: set[tuple[int, int, int]] = field(default_factory=set)


@dataclass(frozen=True)
class PullEvent:
    """Log record of one executed pull."""

    slot: int
    channel: int
    coordinator: str
    attempted: tuple[int, int, int] | None
    success: bool
    payload: bool | None


def execute_pull_runtime(
    node_states: dict[str, NodeState],
    pull: Pull,
    slot: int,
    sampler,
) -> PullEvent:
    """Scalar run-time semantics of one pull.

    The coordinator scans the service list in priority order and attempts
    the first instance it has not yet executed; ``sampler(link, slot)``
    decides the round trip.  On success the coordinator stores the payload
    if the neighbour held it, a dropped marker otherwise.
    """
    coord = node_states.setdefault(pull.coordinator, NodeState())
    for inst in pull.services:
        key = (inst.flow, inst.k, inst.hop)
        if key in coord.executed:
            continue
        ok = bool(sampler((inst.src, inst.dst), slot))
        if ok:
            src_state = node_states.setdefault(inst.src, NodeState())
            if inst.hop == 0:
                has_payload = True
            else:
                has_payload = src_state.packets.get((inst.flow, inst.k), False)
            coord.executed.add(key)
            coord.packets[(inst.flow, inst.k)] = has_payload
            return PullEvent(slot, pull.channel, pull.coordinator, key,
                             True, has_payload)
        return PullEvent(slot, pull.channel, pull.coordinator, key, False, None)
    return PullEvent(slot, pull.channel, pull.coordinator, None, False, None)


def run_reference(
    policy: Policy,
    topo: Topology,
    flows: Sequence[FlowSpec],
    processes: LinkProcess | Mapping[Link, LinkProcess],
    hyperperiods: int,
    seed: int = 0,
    window: int = 100,
) -> RunStats:
    """Scalar oracle equivalent of run(); consumes the identical draws."""
    comp = _compile(policy, flows, topo)
    by_link = _resolve_processes(processes, comp.links)
    specs = {f.id: f for f in flows}
    pulls = []
    for e in sorted(policy.entries, key=lambda e: (e.slot, e.channel)):
        services = tuple(specs[r.flow].instance(r.k, r.hop) for r in e.services)
        pulls.append((e.slot, Pull(e.coordinator, services, e.channel)))

    cell_draws: dict[tuple[int, int], tuple] = {}

    def draws_for(link: Link, slot: int):
        lid = comp.links[link]
        if (lid, slot) not in cell_draws:
            cell_draws[(lid, slot)] = _cell_draws(
                seed, lid, slot, by_link[lid], hyperperiods
            )
        return cell_draws[(lid, slot)]

    delivered: dict[tuple[int, int], int] = {job: 0 for job in comp.final_task}
    window_hits: dict[tuple[int, int], list[int]] = {
        job: [0] * (hyperperiods // window) for job in comp.final_task
    }
    max_resp: dict[int, int | None] = {f.id: None for f in flows}

    for r in range(hyperperiods):
        node_states: dict[str, NodeState] = {}

        def sampler(link: Link, slot: int) -> bool:
            q, u = draws_for(link, slot)
            qv = q[r] if isinstance(q, np.ndarray) else q
            return bool(u[r] < qv)

        for slot, pull in pulls:
            event = execute_pull_runtime(node_states, pull, slot, sampler)
            if event.attempted is None or not event.success or not event.payload:
                continue
            flow, k, hop = event.attempted
            if hop == specs[flow].hop_count - 1:
                delivered[(flow, k)] += 1
                if r < (hyperperiods // window) * window:
                    window_hits[(flow, k)][r // window] += 1
                resp = slot - comp.releases[(flow, k)] + 1
                cur = max_resp[flow]
                max_resp[flow] = resp if cur is None else max(cur, resp)

    stats = RunStats(hyperperiods=hyperperiods, seed=seed, window=window)
    bounds = {(rec.flow, rec.k): rec.bound for rec in policy.analysis}
    jobs_by_flow: dict[int, list[tuple[int, int]]] = {}
    for job in comp.final_task:
        jobs_by_flow.setdefault(job[0], []).append(job)
    for flow, jobs in sorted(jobs_by_flow.items()):
        jobs.sort()
        attempts = len(jobs) * hyperperiods
        got = sum(delivered[job] for job in jobs)
        n_windows = hyperperiods // window
        series = tuple(
            sum(window_hits[job][w] for job in jobs) / (len(jobs) * window)
            for w in range(n_windows)
        )
        flow_bound = min(
            (bounds[job] for job in jobs if job in bounds), default=None
        )
        stats.flows[flow] = FlowStats(
            flow=flow, attempts=attempts, delivered=got, pdr=got / attempts,
            bound=flow_bound, max_response=max_resp[flow], window_pdr=series,
        )
    return stats


@dataclass(frozen=True)
class SweepPoint:
    quality: float
    min_pdr: float
    per_flow: dict[int, float]


def degradation_sweep(
    policy: Policy,
    topo: Topology,
    flows: Sequence[FlowSpec],
    grid: Sequence[float],
    hyperperiods: int,
    seed: int = 0,
) -> list[SweepPoint]:
    """One constant-quality run per grid point, for degradation plots.

    All points share the master seed, so the underlying success draws are
    common and the packet delivery ratio responds to the quality alone.
    """
    points = []
    for q in grid:
        if not 0.0 < q <= 1.0:
            raise SimulationError(f"grid quality {q} outside (0, 1]")
        stats = run(policy, topo, flows, LinkProcess.constant(q),
                    hyperperiods, seed=seed, window=max(hyperperiods, 1))
        points.append(
            SweepPoint(
                quality=float(q),
                min_pdr=stats.min_pdr,
                per_flow={f: fs.pdr for f, fs in stats.flows.items()},
            )
        )
    return points
