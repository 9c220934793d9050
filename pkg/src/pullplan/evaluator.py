"""Joint success/failure tracking for the instances pulled by one coordinator.

A coordinator's state is a probability vector over bitmasks: bit ``b`` set
means the instance in active-list slot ``b`` has been received.  Applying a
pull multiplies the vector by the transition structure of the service list
without ever materialising the matrix: for every mask, the first serviced
instance whose bit is clear is attempted, and its success probability moves
mass to the mask with that bit set.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .model import FlowInstance, FlowSpec, Pull

SUM_TOLERANCE = 1e-9


class EvaluatorError(ValueError):
    """Raised on misuse of a coordinator state or a bad quality view."""


def on_success(mask: int, slot_index: int) -> int:
    """State reached when the instance in ``slot_index`` is received."""
    if slot_index < 0:
        raise EvaluatorError("negative slot index")
    return mask | (1 << slot_index)


@dataclass(frozen=True)
class LinkQualityView:
    """Per-slot link qualities, each within [floor, 1].

    ``floor`` is the minimum quality threshold m; instances without an
    explicit entry are pinned to it, which is exactly the worst-case view
    used during synthesis.
    """

    floor: float
    qualities: Mapping[FlowInstance, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.floor <= 1.0:
            raise EvaluatorError(f"quality floor {self.floor} outside (0, 1]")
        for inst, q in self.qualities.items():
            if not self.floor <= q <= 1.0:
                raise EvaluatorError(
                    f"quality {q} for flow {inst.flow} outside "
                    f"[{self.floor}, 1]"
                )

    def quality(self, instance: FlowInstance) -> float:
        return self.qualities.get(instance, self.floor)


@lru_cache(maxsize=4096)
def _sweep_plan(width: int, service_slots: tuple[int, ...]):
    """Index arrays for one service list over a ``width``-bit state space.

    Returns one (mask indices, bit) pair per serviced slot: the masks in
    which that slot's instance is the first unreceived one.
    """
    masks = np.arange(1 << width)
    remaining = np.ones(masks.size, dtype=bool)
    plan = []
    for s in service_slots:
        if s >= width:
            raise EvaluatorError(f"service slot {s} outside width {width}")
        hit = remaining & ((masks >> s) & 1 == 0)
        plan.append((np.nonzero(hit)[0], 1 << s))
        remaining &= ~hit
    return tuple(plan)


def apply_service_sweep(
    dist: np.ndarray, service_slots: Sequence[int], qualities: Sequence[float]
) -> np.ndarray:
    """One pull applied to a raw distribution vector; returns a new vector."""
    width = int(dist.size).bit_length() - 1
    if 1 << width != dist.size:
        raise EvaluatorError("distribution length is not a power of two")
    new = dist.copy()
    for (idx, bit), q in zip(_sweep_plan(width, tuple(service_slots)), qualities):
        moved = dist[idx] * q
        new[idx] -= moved
        new[idx + bit] += moved
    return new


@lru_cache(maxsize=1024)
def _bit_indices(width: int, slot: int) -> np.ndarray:
    masks = np.arange(1 << width)
    return np.nonzero((masks >> slot) & 1)[0]


class CoordinatorState:
    """Active list, inactive queue, and joint distribution of one coordinator.

    Mutated only by the single synthesis driver that owns it.
    """

    def __init__(self, coordinator: str, active_cap: int) -> None:
        if active_cap < 1:
            raise EvaluatorError("active_cap must be positive")
        self.coordinator = coordinator
        self.active_cap = active_cap
        self.active: list[FlowInstance] = []
        self._inactive: list[tuple[int, int, FlowInstance]] = []
        self._seq = 0
        self.dist = np.ones(1)

    @property
    def inactive(self) -> list[FlowInstance]:
        return [inst for _, _, inst in sorted(self._inactive)]

    def _check_sum(self) -> None:
        total = float(self.dist.sum())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise EvaluatorError(
                f"distribution sum {total} drifted beyond {SUM_TOLERANCE}"
            )

    def slot_of(self, instance: FlowInstance) -> int:
        try:
            return self.active.index(instance)
        except ValueError:
            raise EvaluatorError(
                f"flow {instance.flow} instance {instance.k} hop "
                f"{instance.hop} is not active at {self.coordinator!r}"
            ) from None

    def admit(self, instance: FlowInstance) -> bool:
        """Add an instance; returns True if it went active, False if queued."""
        if instance.dst != self.coordinator:
            raise EvaluatorError(
                f"instance targets {instance.dst!r}, not {self.coordinator!r}"
            )
        if instance in self.active or any(i == instance for _, _, i in self._inactive):
            raise EvaluatorError("duplicate admission")
        if len(self.active) < self.active_cap:
            self.active.append(instance)
            self.dist = np.concatenate([self.dist, np.zeros_like(self.dist)])
            self._check_sum()
            return True
        heapq.heappush(self._inactive, (instance.flow, self._seq, instance))
        self._seq += 1
        return False

    def apply_pull(self, pull: Pull, lq: LinkQualityView) -> None:
        slots = [self.slot_of(inst) for inst in pull.services]
        qualities = [lq.quality(inst) for inst in pull.services]
        self.dist = apply_service_sweep(self.dist, slots, qualities)
        self._check_sum()

    def marginal(self, instance: FlowInstance) -> float:
        """P(instance received) = sum over masks with its bit set."""
        slot = self.slot_of(instance)
        return float(self.dist[_bit_indices(len(self.active), slot)].sum())

    def retire(self, instance: FlowInstance, force: bool = False) -> FlowInstance | None:
        """Marginalise an instance out, preserving the survivors' joint law.

        Unless ``force`` (the deadline-failure path), the instance must have
        met its local target.  Returns the instance promoted from the
        inactive queue into the freed slot, if any.
        """
        slot = self.slot_of(instance)
        if not force and self.marginal(instance) < instance.local_target:
            raise EvaluatorError(
                f"flow {instance.flow} marginal below local target; "
                "use force for deadline failures"
            )
        width = len(self.active)
        self.dist = (
            self.dist.reshape(1 << (width - 1 - slot), 2, 1 << slot)
            .sum(axis=1)
            .ravel()
        )
        self.active.pop(slot)
        self._check_sum()
        if self._inactive:
            _, _, promoted = heapq.heappop(self._inactive)
            self.admit(promoted)
            return promoted
        return None


def release_next_subflow(
    flow: FlowSpec, k: int, completed_hop: int, slot: int
) -> tuple[FlowInstance, int] | None:
    """Successor hop instance once ``completed_hop`` met its local target
    at ``slot``; serviceable from ``slot + 1``.  None after the final hop."""
    nxt = completed_hop + 1
    if nxt >= flow.hop_count:
        return None
    return flow.instance(k, nxt), slot + 1


def end_to_end_bound(hop_bounds: Sequence[float | None]) -> float:
    """Product of the per-hop bounds at their completion slots."""
    if not hop_bounds or any(b is None for b in hop_bounds):
        raise EvaluatorError("end-to-end bound requires every hop complete")
    return math.prod(hop_bounds)  # type: ignore[arg-type]
