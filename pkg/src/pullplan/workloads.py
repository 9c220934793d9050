"""Topology builders and workload generators for the experiment families.

Workload kinds: collection (COL, nodes to base), dissemination (DIS, base to
nodes), a random mix of both (MIX), and route-through-base (RTB).  Flows are
assigned to period classes in a 1:2:5 ratio and prioritised deadline
monotonically, ties broken by longer route, then by input order.
"""

from __future__ import annotations

import math
import random
from typing import Sequence

from .model import FlowSpec, ModelError, Topology

WORKLOAD_KINDS = ("COL", "DIS", "MIX", "RTB")
CLASS_RATIO = (1, 2, 5)


def star_topology(n_leaves: int, channel_count: int = 16,
                  base: str = "base") -> Topology:
    """Base station with ``n_leaves`` leaf nodes and edges in both directions."""
    leaves = [f"s{i:02d}" for i in range(n_leaves)]
    edges = set()
    for leaf in leaves:
        edges.add((leaf, base))
        edges.add((base, leaf))
    return Topology(
        nodes=frozenset([base, *leaves]),
        edges=frozenset(edges),
        base_station=base,
        channel_count=channel_count,
    )


def star_flows(count: int, period: int, target: float = 0.99,
               deadline: int | None = None, base: str = "base") -> list[FlowSpec]:
    """Identical collection flows on a star; priority equals input order."""
    deadline = period if deadline is None else deadline
    return [
        FlowSpec(id=i, phase=0, period=period, deadline=deadline,
                 target=target, path=(f"s{i:02d}", base))
        for i in range(count)
    ]


def mesh_topology(n_nodes: int, avg_degree: float = 5.0, seed: int = 0,
                  channel_count: int = 16) -> Topology:
    """Connected random geometric mesh, symmetric links, centre node as base.

    Nodes are scattered in the unit square and joined to their nearest
    neighbours until the average (undirected) degree target is met; stray
    components are stitched to their nearest settled node.
    """
    if n_nodes < 2:
        raise ModelError("mesh needs at least two nodes")
    rng = random.Random(seed)
    names = [f"n{i:02d}" for i in range(n_nodes)]
    pos = {name: (rng.random(), rng.random()) for name in names}

    def dist(a: str, b: str) -> float:
        ax, ay = pos[a]
        bx, by = pos[b]
        return math.hypot(ax - bx, ay - by)

    target_links = max(n_nodes - 1, round(avg_degree * n_nodes / 2))
    ranked = sorted(
        ((dist(a, b), a, b) for i, a in enumerate(names) for b in names[i + 1:]),
    )
    links = {(a, b) for _d, a, b in ranked[:target_links]}

    # Stitch components together on the shortest missing link.
    parent = {n: n for n in names}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in links:
        parent[find(a)] = find(b)
    for _d, a, b in ranked[target_links:]:
        if find(a) != find(b):
            links.add((a, b))
            parent[find(a)] = find(b)

    cx = sum(p[0] for p in pos.values()) / n_nodes
    cy = sum(p[1] for p in pos.values()) / n_nodes
    base = min(names, key=lambda n: (math.hypot(pos[n][0] - cx, pos[n][1] - cy), n))
    edges = set()
    for a, b in links:
        edges.add((a, b))
        edges.add((b, a))
    return Topology(
        nodes=frozenset(names),
        edges=frozenset(edges),
        base_station=base,
        channel_count=channel_count,
    )


def routing_parents(topo: Topology, toward_base: bool) -> dict[str, str]:
    """BFS next-hop map: toward the base (upstream) or away from it.

    Deterministic: neighbours are visited in sorted order.  Upstream
    parents follow directed edges into the base; downstream parents are the
    predecessor on the shortest base-to-node path.
    """
    base = topo.base_station
    if toward_base:
        adjacency: dict[str, list[str]] = {n: [] for n in topo.nodes}
        for a, b in topo.edges:
            adjacency[b].append(a)
    else:
        adjacency = {n: [] for n in topo.nodes}
        for a, b in topo.edges:
            adjacency[a].append(b)
    parents: dict[str, str] = {}
    frontier = [base]
    seen = {base}
    while frontier:
        nxt: list[str] = []
        for node in frontier:
            for other in sorted(adjacency[node]):
                if other not in seen:
                    seen.add(other)
                    parents[other] = node
                    nxt.append(other)
        frontier = nxt
    return parents


def upstream_path(node: str, up: dict[str, str], base: str) -> list[str]:
    path = [node]
    while path[-1] != base:
        if path[-1] not in up:
            raise ModelError(f"{node!r} cannot reach the base station")
        path.append(up[path[-1]])
    return path


def downstream_path(node: str, down: dict[str, str], base: str) -> list[str]:
    rev = [node]
    while rev[-1] != base:
        if rev[-1] not in down:
            raise ModelError(f"base station cannot reach {node!r}")
        rev.append(down[rev[-1]])
    return rev[::-1]


def assign_priorities(flows: Sequence[FlowSpec]) -> list[FlowSpec]:
    """Re-id flows deadline monotonically.

    Shorter deadline first; ties go to the longer route, remaining ties to
    input order.
    """
    order = sorted(
        range(len(flows)),
        key=lambda i: (flows[i].deadline, -len(flows[i].path), i),
    )
    out = []
    for rank, i in enumerate(order):
        f = flows[i]
        out.append(FlowSpec(id=rank, phase=f.phase, period=f.period,
                            deadline=f.deadline, target=f.target, path=f.path))
    return out


def generate_workload(
    topo: Topology,
    kind: str,
    count: int,
    base_period: int,
    target: float = 0.99,
    seed: int = 0,
    class_ratio: Sequence[int] = CLASS_RATIO,
) -> list[FlowSpec]:
    """Random flow set of one experiment family, reproducible from the seed."""
    if kind not in WORKLOAD_KINDS:
        raise ModelError(f"unknown workload kind {kind!r}")
    rng = random.Random(seed)
    base = topo.base_station
    up = routing_parents(topo, toward_base=True)
    down = routing_parents(topo, toward_base=False)
    others = sorted(topo.nodes - {base})
    if not others:
        raise ModelError("topology has no nodes besides the base station")

    def sample_path(flavour: str) -> tuple[str, ...]:
        for _ in range(200):
            if flavour == "COL":
                path = upstream_path(rng.choice(others), up, base)
            elif flavour == "DIS":
                path = downstream_path(rng.choice(others), down, base)
            else:
                src, dst = rng.sample(others, 2)
                path = upstream_path(src, up, base) + downstream_path(dst, down, base)[1:]
            if len(path) >= 2 and len(set(path)) == len(path):
                return tuple(path)
        raise ModelError(f"could not sample a loop-free {flavour} route")

    drafts: list[FlowSpec] = []
    for i in range(count):
        flavour = kind if kind != "MIX" else rng.choice(["COL", "DIS"])
        path = sample_path(flavour)
        period = base_period * rng.choice(list(class_ratio))
        drafts.append(
            FlowSpec(id=i, phase=0, period=period, deadline=period,
                     target=target, path=path)
        )
    return assign_priorities(drafts)


def scale_periods(flows: Sequence[FlowSpec], old_base: int,
                  new_base: int) -> list[FlowSpec]:
    """Rebuild a class-structured flow set on a new base period.

    Every period must be an exact class multiple of ``old_base`` so the
    1:2:5 ratio survives the rescale; deadlines stay equal to periods.
    """
    out = []
    for f in flows:
        if f.period % old_base:
            raise ModelError(
                f"flow {f.id}: period {f.period} is not a multiple of the "
                f"base period {old_base}"
            )
        ratio = f.period // old_base
        out.append(FlowSpec(id=f.id, phase=f.phase, period=ratio * new_base,
                            deadline=ratio * new_base, target=f.target,
                            path=f.path))
    return assign_priorities(out)
