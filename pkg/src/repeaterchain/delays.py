"""Classical-communication delays for an agent sitting at node ``k``.

All delays are integer numbers of time steps, one time step being the signal
travel time between neighbouring nodes.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Any, NamedTuple


@dataclass(frozen=True)
class DelayParams:
    n: int
    k: int
    # alternative EG delay max(|k-i|, |k-i+1|)
    eq1_literal: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 0 <= self.k <= self.n - 1:
            raise ValueError(f"agent node k={self.k} outside [0, {self.n - 1}]")


def delta_eg(i: int, params: DelayParams) -> int:
    """Steps for an EG instruction to reach the farther endpoint of segment ``i``.

    The heralded result needs the same number of steps to come back.
    """
    if not 0 <= i <= params.n - 2:
        raise ValueError(f"segment {i} out of range for n={params.n}")
    k = params.k
    if params.eq1_literal:
        return max(abs(k - i), abs(k - i + 1))
    return max(abs(k - i), abs(k - (i + 1)))


def delta_eg_max(params: DelayParams) -> int:
    return max(delta_eg(i, params) for i in range(params.n - 1))


def delta_swap(i: int, params: DelayParams) -> int:
    if not 0 <= i <= params.n - 1:
        raise ValueError(f"node {i} out of range for n={params.n}")
    return abs(params.k - i)


def delta_swap_result(params: DelayParams) -> int:
    """Steps until swap outcomes from every non-end node have reached the agent."""
    return max(params.k - 1, params.n - 2 - params.k, 0)


def wb_cycle_length(params: DelayParams) -> int:
    """Time steps one EG phase plus one swap phase of wait-for-broadcast takes."""
    inner = range(1, params.n - 1)
    swap_out = max((delta_swap(i, params) for i in inner), default=0)
    return 2 * delta_eg_max(params) + swap_out + delta_swap_result(params)


class Instruction(NamedTuple):
    kind: str  # "swap" or "eg"
    target: int
    round_issued: int


class Result(NamedTuple):
    kind: str
    target: int
    outcome: int
    round_of_action: int


class MessageBus:
    """Pending messages keyed by the clock tick at which they arrive.

    Messages due at the same tick come out in the order they were sent.
    """

    def __init__(self):
        self._heap: list[tuple[int, int, Any]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def send(self, payload: Any, due: int, now: int | None = None) -> None:
        if now is not None and due < now:
            raise ValueError(f"cannot schedule at {due}, before now={now}")
        heapq.heappush(self._heap, (due, next(self._seq), payload))

    def collect(self, now: int) -> list[Any]:
        """Remove and return every payload due at or before ``now``."""
        out = []
        while self._heap and self._heap[0][0] <= now:
            out.append(heapq.heappop(self._heap)[2])
        return out

    def drain(self) -> list[Any]:
        return self.collect(float("inf"))

    def pending(self) -> list[tuple[int, Any]]:
        return [(due, payload) for due, _, payload in sorted(self._heap)]
