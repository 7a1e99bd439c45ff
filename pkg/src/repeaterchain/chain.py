"""Ground-truth state of a linear repeater chain.

Links are stored as ``(i, j) -> effective age`` with ``i < j``. Every node has
two qubits: the left one (facing node ``i - 1``) and the right one (facing
node ``i + 1``). A link ``(i, j)`` occupies the right qubit of ``i`` and the
left qubit of ``j``.

All transition functions take the action outcome as an argument and return a
new state; randomness lives in the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

UNBOUNDED = math.inf

Link = tuple[int, int]


@dataclass(frozen=True)
class ChainState:
    """Links present in the chain together with their effective ages.

    Parameters
    ----------
    n : int
        Number of nodes.
    t_cut : int or float
        Cutoff in time steps. ``UNBOUNDED`` disables discarding.
    links : mapping
        ``(i, j) -> age`` with ``i < j``.
    """

    n: int
    t_cut: float
    links: Mapping[Link, int] = field(default_factory=dict)

    def right_partner(self, i: int) -> int | None:
        for a, b in self.links:
            if a == i:
                return b
        return None

    def left_partner(self, i: int) -> int | None:
        for a, b in self.links:
            if b == i:
                return a
        return None

    def degree(self, i: int) -> int:
        return sum((a == i) + (b == i) for a, b in self.links)

    def key(self, with_ages: bool = True) -> tuple:
        if with_ages:
            return tuple(sorted(self.links.items()))
        return tuple(sorted(self.links))

    def check(self, strict: bool = False) -> None:
        """Raise ``AssertionError`` if the qubit-exclusivity invariants fail.

        ``strict`` also requires every age to be within the cutoff, which
        holds right after :func:`advance_age` but not between a swap and the
        next aging.
        """
        right: set[int] = set()
        left: set[int] = set()
        for (a, b), age in self.links.items():
            assert 0 <= a < b <= self.n - 1, (a, b)
            assert a not in right and b not in left, (a, b)
            right.add(a)
            left.add(b)
            assert age >= 0, ((a, b), age)
            assert not strict or age <= self.t_cut, ((a, b), age)


def new_chain(n: int, t_cut: float = UNBOUNDED) -> ChainState:
    if n < 2:
        raise ValueError(f"a chain needs at least 2 nodes, got n={n}")
    if t_cut != UNBOUNDED and (int(t_cut) != t_cut or t_cut < 1):
        raise ValueError(f"t_cut must be a positive integer or UNBOUNDED, got {t_cut}")
    return ChainState(n, t_cut, {})


def apply_entangle(state: ChainState, i: int, success: bool) -> ChainState:
    """Free both qubits of segment ``i`` and, on success, link ``(i, i+1)`` at age 0."""
    if not 0 <= i <= state.n - 2:
        raise ValueError(f"segment {i} out of range for n={state.n}")
    links = {(a, b): t for (a, b), t in state.links.items() if a != i and b != i + 1}
    if success:
        links[(i, i + 1)] = 0
    return ChainState(state.n, state.t_cut, links)


def apply_swap(state: ChainState, i: int, success: bool) -> ChainState:
    """Swap at node ``i``.

    With two links ``(j, i)`` and ``(i, k)`` the result is ``(j, k)`` whose age
    is the sum of both ages, or nothing on failure. The merged age may exceed
    the cutoff; such a link is discarded at the next aging. With fewer than two links
    every link touching ``i`` is dropped whatever ``success`` says.
    """
    if not 1 <= i <= state.n - 2:
        raise ValueError(f"swap on node {i} is not allowed for n={state.n}")
    j = state.left_partner(i)
    k = state.right_partner(i)
    links = {(a, b): t for (a, b), t in state.links.items() if a != i and b != i}
    if success and j is not None and k is not None:
        links[(j, k)] = state.links[(j, i)] + state.links[(i, k)]
    return ChainState(state.n, state.t_cut, links)


def swap_would_succeed(state: ChainState, i: int) -> bool:
    """Whether node ``i`` holds two links, i.e. a successful draw merges them."""
    return state.left_partner(i) is not None and state.right_partner(i) is not None


def advance_age(state: ChainState) -> ChainState:
    links = {l: t + 1 for l, t in state.links.items() if t + 1 <= state.t_cut}
    return ChainState(state.n, state.t_cut, links)


def is_end_to_end(state: ChainState) -> bool:
    return (0, state.n - 1) in state.links


def apply_swaps(state: ChainState, outcomes: Mapping[int, bool] | Iterable[tuple[int, bool]]) -> ChainState:
    """Resolve simultaneous swaps in ascending node order."""
    items = outcomes.items() if isinstance(outcomes, Mapping) else outcomes
    for i, ok in sorted(items):
        state = apply_swap(state, i, ok)
    return state


@dataclass(frozen=True)
class FidelityModel:
    """Depolarising link quality: elementary parameter ``p_el`` and memory time ``T``."""

    p_el: float
    T: float

    def __post_init__(self):
        if not 0.0 <= self.p_el <= 1.0:
            raise ValueError(f"p_el must lie in [0, 1], got {self.p_el}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")


def end_to_end_param(model: FidelityModel, n: int, t_eff: float) -> float:
    """Werner parameter of a link built from ``n`` elementary links with effective age ``t_eff``."""
    if t_eff < 0:
        raise ValueError("t_eff must be non-negative")
    return model.p_el**n * math.exp(-t_eff / model.T)


def fidelity_of(a: float) -> float:
    return (1 + 3 * a) / 4
