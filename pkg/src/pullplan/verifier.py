"""Independent oracles and property drivers for the reliability machinery.

Everything here re-derives results along a second route: dense transition
matrices built state by state, exhaustive enumeration of pull outcomes, and
randomised trials over pull sequences that include priority inversions the
synthesizer itself never emits.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .builder import SlotProblem, assign_channels, solve_slot
from .evaluator import apply_service_sweep, on_success
from .model import FlowInstance

MAX_DENSE_WIDTH = 12
MAX_BRUTE_INSTANCES = 3
MAX_BRUTE_PULLS = 8

RECONSTRUCTION_TOL = 1e-12


class VerifierError(ValueError):
    pass


@dataclass
class CheckReport:
    """Machine-readable outcome of one property check."""

    name: str
    trials: int
    counterexamples: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    def summary(self) -> str:
        state = "pass" if self.passed else f"FAIL ({len(self.counterexamples)})"
        return f"{self.name}: {state} over {self.trials} trials"


def dense_transition_matrix(
    service_slots: Sequence[int], qualities: Sequence[float], width: int
) -> np.ndarray:
    """Explicit 2^width x 2^width row-stochastic matrix for one pull.

    For each state, the first serviced slot whose bit is clear is executed:
    its quality moves mass to the bit-set state, the complement stays put.
    """
    if width > MAX_DENSE_WIDTH:
        raise VerifierError(f"width {width} exceeds {MAX_DENSE_WIDTH}")
    if len(service_slots) != len(qualities):
        raise VerifierError("one quality per serviced slot required")
    n = 1 << width
    mat = np.eye(n)
    for current in range(n):
        for slot, q in zip(service_slots, qualities):
            if (current >> slot) & 1 == 0:
                nxt = on_success(current, slot)
                mat[current, current] = 1.0 - q
                mat[current, nxt] = q
                break
    return mat


def decompose(
    matrix: np.ndarray, qualities: Sequence[float]
) -> tuple[list[np.ndarray] | None, list[str]]:
    """Split a pull matrix into identity plus quality-weighted update terms.

    Returns (per-slot E matrices, problems).  The E list is None whenever
    the matrix does not have the required structure: each E upper-triangular
    in the bitmask order, entries in {-1, 0, 1}, and every nonzero row made
    of exactly one +1 off the diagonal and one -1 on it.
    """
    n = matrix.shape[0]
    width = n.bit_length() - 1
    if matrix.shape != (n, n) or 1 << width != n:
        return None, ["matrix is not square with power-of-two size"]
    problems: list[str] = []
    mats = [np.zeros((n, n)) for _ in range(width)]
    for i in range(n):
        row = matrix[i].copy()
        diag = row[i]
        row[i] = 0.0
        nz = np.nonzero(np.abs(row) > RECONSTRUCTION_TOL)[0]
        if nz.size == 0:
            if abs(diag - 1.0) > RECONSTRUCTION_TOL:
                problems.append(f"row {i}: inert row has diagonal {diag}")
            continue
        if nz.size > 1:
            problems.append(f"row {i}: {nz.size} off-diagonal entries")
            continue
        j = int(nz[0])
        step = j - i
        if j < i or step & (step - 1) != 0 or (i >> int(math.log2(step))) & 1:
            problems.append(f"row {i}: transition to {j} is not a bit set")
            continue
        bit = int(math.log2(step))
        if bit >= len(qualities):
            problems.append(f"row {i}: no quality for bit {bit}")
            continue
        q = qualities[bit]
        if abs(matrix[i, j] - q) > RECONSTRUCTION_TOL or abs(diag - (1.0 - q)) > RECONSTRUCTION_TOL:
            problems.append(f"row {i}: entries disagree with quality {q}")
            continue
        mats[bit][i, i] = -1.0
        mats[bit][i, j] = 1.0
    if problems:
        return None, problems
    recon = np.eye(n)
    for bit, e in enumerate(mats):
        recon = recon + qualities[bit] * e
    err = float(np.abs(recon - matrix).max())
    if err > RECONSTRUCTION_TOL:
        return None, [f"reconstruction error {err}"]
    return mats, []


def _leq(a: int, b: int) -> bool:
    """Partial order on states: every received bit of ``a`` is set in ``b``."""
    return a & ~b == 0


def check_partial_order(width: int) -> CheckReport:
    """Exhaustive check that receiving an instance respects the state order.

    Over every mask pair and every slot: s <= on_success(s, k), and
    s1 <= s2 implies on_success(s1, k) <= on_success(s2, k).
    """
    if width > 10:
        raise VerifierError("width capped at 10")
    report = CheckReport("partial-order-monotonicity", trials=0)
    n = 1 << width
    masks = np.arange(n, dtype=np.int64)
    leq = (masks[:, None] & ~masks[None, :]) == 0
    for k in range(width):
        succ = masks | (1 << k)
        grow = (masks & ~succ) == 0
        if not bool(grow.all()):
            for s in np.nonzero(~grow)[0]:
                report.counterexamples.append(f"s={int(s)} k={k} not <= successor")
        mono = leq <= leq[succ[:, None], succ[None, :]]
        if not bool(mono.all()):
            bad = np.argwhere(~mono)
            for s1, s2 in bad[:10]:
                report.counterexamples.append(
                    f"s1={int(s1)} s2={int(s2)} k={k} breaks monotonicity"
                )
        report.trials += n * n
    return report


def brute_force_reliability(
    pulls: Sequence[tuple[str, Sequence[FlowInstance]]],
    quality: Callable[[FlowInstance, int], float],
    instances: Sequence[FlowInstance] = (),
) -> dict[str, dict]:
    """Exact reliabilities by enumerating every pull outcome sequence.

    ``pulls`` is the slot-ordered sequence of (coordinator, service list)
    pairs; ``quality(instance, index)`` gives the success probability of the
    round trip attempted at that sequence position.  Returns per-subflow
    executed-probability trajectories and per-(flow, k) end-to-end delivery
    probabilities, weighting each outcome path by its Bernoulli product.
    ``instances`` adds subflows that never appear in a service list, whose
    reliabilities are reported as zero.
    """
    keys = {(i.flow, i.k, i.hop) for _, srv in pulls for i in srv}
    keys |= {(i.flow, i.k, i.hop) for i in instances}
    if len({(f, k) for f, k, _ in keys}) > MAX_BRUTE_INSTANCES:
        raise VerifierError(f"more than {MAX_BRUTE_INSTANCES} instances")
    if len(pulls) > MAX_BRUTE_PULLS:
        raise VerifierError(f"more than {MAX_BRUTE_PULLS} pulls")

    # State: (executed marks, payload-present marks) over subflow keys.
    states: dict[tuple[frozenset, frozenset], float] = {
        (frozenset(), frozenset()): 1.0
    }
    executed_traj: dict[tuple[int, int, int], list[float]] = {k: [] for k in keys}
    delivered_traj: dict[tuple[int, int, int], list[float]] = {k: [] for k in keys}

    for idx, (_coord, services) in enumerate(pulls):
        nxt: dict[tuple[frozenset, frozenset], float] = {}

        def put(state: tuple[frozenset, frozenset], p: float) -> None:
            if p > 0.0:
                nxt[state] = nxt.get(state, 0.0) + p

        for (done, payload), prob in states.items():
            attempt = next(
                (i for i in services if (i.flow, i.k, i.hop) not in done), None
            )
            if attempt is None:
                put((done, payload), prob)
                continue
            key = (attempt.flow, attempt.k, attempt.hop)
            q = quality(attempt, idx)
            src_has = attempt.hop == 0 or (attempt.flow, attempt.k, attempt.hop - 1) in payload
            succ_payload = payload | {key} if src_has else payload
            put((done | {key}, succ_payload), prob * q)
            put((done, payload), prob * (1.0 - q))
        states = nxt
        for key in keys:
            executed_traj[key].append(
                sum(p for (done, _), p in states.items() if key in done)
            )
            delivered_traj[key].append(
                sum(p for (_, payload), p in states.items() if key in payload)
            )

    final_hop: dict[tuple[int, int], int] = {}
    for f, k, h in keys:
        final_hop[(f, k)] = max(h, final_hop.get((f, k), 0))
    delivery = {
        fk: delivered_traj[(fk[0], fk[1], h)][-1] if pulls else 0.0
        for fk, h in final_hop.items()
    }
    return {
        "executed": executed_traj,
        "delivered": delivered_traj,
        "delivery": delivery,
    }


@lru_cache(maxsize=64)
def _chi_matrix(width: int) -> np.ndarray:
    masks = np.arange(1 << width)
    return ((masks[:, None] >> np.arange(width)[None, :]) & 1).astype(float)


def _chi_marginals(dist: np.ndarray, width: int) -> np.ndarray:
    """Per-slot received probability of a raw distribution vector."""
    return dist @ _chi_matrix(width)


def check_worst_case_bound(
    trials: int, width: int = 4, horizon: int = 20, floor: float = 0.7,
    seed: int = 0,
) -> CheckReport:
    """Randomised check that the pinned-to-floor chain lower-bounds reality.

    Each trial draws a random pull sequence over ``width`` instances,
    including priority-inverted service orders, and per-slot qualities in
    [floor, 1]; the exact per-instance reliabilities must dominate the
    all-floor bound at every slot, within 1e-12.
    """
    if width > 6 or horizon > 20:
        raise VerifierError("width capped at 6, horizon at 20")
    if not 0.0 < floor < 1.0:
        raise VerifierError("floor must be in (0, 1)")
    rng = random.Random(seed)
    report = CheckReport("worst-case-bound-safety", trials=trials)
    for trial in range(trials):
        w = rng.randint(1, width)
        n = 1 << w
        exact = np.zeros(n)
        exact[0] = 1.0
        pinned = exact.copy()
        for t in range(rng.randint(1, horizon)):
            size = rng.randint(1, w)
            slots = rng.sample(range(w), size)
            qs = [rng.uniform(floor, 1.0) for _ in slots]
            exact = apply_service_sweep(exact, slots, qs)
            pinned = apply_service_sweep(pinned, slots, [floor] * size)
            gap = _chi_marginals(exact, w) - _chi_marginals(pinned, w)
            if float(gap.min()) < -1e-12:
                report.counterexamples.append(
                    f"trial {trial} slot {t}: bound exceeded exact by {-gap.min():.3g}"
                )
    return report


def check_nonpreemptive_monotonicity(
    trials: int,
    instances: int = 3,
    horizon: int = 12,
    grid: Sequence[float] = tuple(np.arange(0.50, 1.0001, 0.05)),
    seed: int = 0,
) -> CheckReport:
    """Reliability under nonpreemptive pulls is non-decreasing in quality.

    Nonpreemptive means the service list is always the prefix of instances
    in the order the coordinator started executing them, never reordered.
    Samples each instance's reliability over the quality grid and checks
    per-slot monotonicity.
    """
    if instances > 3 or horizon > 12:
        raise VerifierError("instances capped at 3, horizon at 12")
    rng = random.Random(seed)
    report = CheckReport("nonpreemptive-monotonicity", trials=trials)
    for trial in range(trials):
        w = rng.randint(1, instances)
        steps = rng.randint(w, horizon)
        # Slot at which each successive instance joins the service prefix.
        joins = sorted(rng.sample(range(steps), w))
        prev: np.ndarray | None = None
        for q in grid:
            dist = np.zeros(1 << w)
            dist[0] = 1.0
            history = []
            for t in range(steps):
                prefix = sum(1 for j in joins if j <= t)
                if prefix:
                    dist = apply_service_sweep(
                        dist, list(range(prefix)), [q] * prefix
                    )
                history.append(_chi_marginals(dist, w))
            cur = np.array(history)
            if prev is not None and float((cur - prev).min()) < -1e-12:
                report.counterexamples.append(
                    f"trial {trial}: reliability dips between grid points at q={q:.2f}"
                )
            prev = cur
    return report


def check_decomposition_random(trials: int, seed: int = 0,
                               width: int = 4) -> CheckReport:
    """Random pull matrices must decompose with the required structure."""
    rng = random.Random(seed)
    report = CheckReport("decomposition-structure", trials=trials)
    for trial in range(trials):
        w = rng.randint(1, width)
        size = rng.randint(1, w)
        slots = rng.sample(range(w), size)
        qualities = [0.0] * w
        for s in slots:
            qualities[s] = rng.uniform(0.05, 1.0)
        mat = dense_transition_matrix(slots, [qualities[s] for s in slots], w)
        mats, problems = decompose(mat, qualities)
        if mats is None:
            report.counterexamples.append(f"trial {trial}: {problems[0]}")
    return report


def _random_slot_problem(rng: random.Random, max_size: int) -> SlotProblem:
    n_nodes = rng.randint(3, 8)
    nodes = [f"n{i}" for i in range(n_nodes)]
    size = rng.randint(0, max_size)
    candidates = []
    for flow in range(size):
        src, dst = rng.sample(nodes, 2)
        candidates.append(
            FlowInstance(flow=flow, k=0, hop=0, release=0, deadline=10,
                         src=src, dst=dst, local_target=0.9)
        )
    last = {
        node: rng.randrange(0, 4)
        for node in nodes if rng.random() < 0.5
    }
    return SlotProblem(
        candidates=tuple(candidates),
        last_channels=last,
        channel_count=rng.randint(2, 4),
        service_cap=rng.randint(1, 4),
    )


def _best_subset_exhaustive(problem: SlotProblem) -> tuple[FlowInstance, ...]:
    """Exhaustive lexicographic optimum over all candidate subsets.

    Subsets are scanned as bitmasks over priority ranks in decreasing
    numeric order, which is exactly decreasing power-of-two objective
    order, so the first feasible subset is the optimum.  The pairwise
    conflict filter is precomputed per candidate to keep the scan cheap.
    """
    ordered = sorted(problem.candidates, key=lambda c: c.flow)
    n = len(ordered)
    conflict_mask = [0] * n
    for i in range(n):
        for j in range(n):
            if i != j and (
                (ordered[i].src == ordered[j].src and ordered[i].dst != ordered[j].dst)
                or ordered[i].src == ordered[j].dst
                or ordered[j].src == ordered[i].dst
            ):
                conflict_mask[i] |= 1 << j
    for mask in range((1 << n) - 1, -1, -1):
        # Bit (n-1-i) selects rank i so higher masks carry higher priority.
        bits = [i for i in range(n) if mask & (1 << (n - 1 - i))]
        sel = sum(1 << i for i in bits)
        if any(sel & conflict_mask[i] for i in bits):
            continue
        per_coord: dict[str, int] = {}
        over = False
        for i in bits:
            dst = ordered[i].dst
            per_coord[dst] = per_coord.get(dst, 0) + 1
            if per_coord[dst] > problem.service_cap:
                over = True
                break
        if over:
            continue
        coords = list(dict.fromkeys(ordered[i].dst for i in bits))
        if coords and assign_channels(coords, problem.last_channels,
                                      problem.channel_count) is None:
            continue
        return tuple(ordered[i] for i in bits)
    return ()


def check_builder_optimality(trials: int, max_size: int = 12,
                             seed: int = 0) -> CheckReport:
    """Greedy slot selection equals exhaustive lexicographic enumeration."""
    if max_size > 12:
        raise VerifierError("enumeration capped at 12 candidates")
    rng = random.Random(seed)
    report = CheckReport("builder-lexicographic-optimality", trials=trials)
    for trial in range(trials):
        problem = _random_slot_problem(rng, max_size)
        got = solve_slot(problem)
        best = _best_subset_exhaustive(problem)
        if set(got.selected) != set(best):
            report.counterexamples.append(
                f"trial {trial}: greedy {[c.flow for c in got.selected]} "
                f"vs exhaustive {[c.flow for c in best]}"
            )
    return report


def check_slot_conflicts(trials: int, seed: int = 0) -> CheckReport:
    """Selected slots never make a node send and receive, or send twice."""
    rng = random.Random(seed)
    report = CheckReport("slot-conflict-freedom", trials=trials)
    for trial in range(trials):
        problem = _random_slot_problem(rng, 10)
        got = solve_slot(problem)
        coords = set(got.coordinators)
        senders: dict[str, str] = {}
        for inst in got.selected:
            if inst.src in coords:
                report.counterexamples.append(
                    f"trial {trial}: {inst.src} sends and receives"
                )
            owner = senders.get(inst.src)
            if owner is not None and owner != inst.dst:
                report.counterexamples.append(
                    f"trial {trial}: {inst.src} transmits in two pulls"
                )
            senders[inst.src] = inst.dst
        chans = list(got.channels.values())
        if len(set(chans)) != len(chans):
            report.counterexamples.append(f"trial {trial}: channel reuse")
        for coord in got.coordinators:
            last = problem.last_channels.get(coord)
            if last is not None and got.channels[coord] == last:
                report.counterexamples.append(
                    f"trial {trial}: {coord} fails to hop channels"
                )
    return report


def run_full_suite(seed: int = 0, *, order_width: int = 10,
                   decomposition_trials: int = 1000,
                   safety_trials: int = 10000,
                   optimality_trials: int = 1000,
                   monotonicity_trials: int = 1000) -> list[CheckReport]:
    """Every property check at its published scale; used by the CLI."""
    return [
        check_partial_order(order_width),
        check_decomposition_random(decomposition_trials, seed=seed),
        check_worst_case_bound(safety_trials, seed=seed),
        check_builder_optimality(optimality_trials, seed=seed),
        check_slot_conflicts(optimality_trials, seed=seed + 1),
        check_nonpreemptive_monotonicity(monotonicity_trials, seed=seed),
    ]
