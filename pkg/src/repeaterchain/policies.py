"""Swap-asap baselines: instantaneous, wait-for-broadcast and predictive.

Delivery times are counted on the time-step clock, which ticks once per
completed EG round. A link that becomes end-to-end in the swap round of step
``t`` is delivered at ``t``; one that appears in the EG round is delivered at
``t + 1``. This equals ``ceil(round_index / 2)`` in the environment's round
numbering.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import chain
from .chain import UNBOUNDED, ChainState
from .delays import DelayParams, Result, wb_cycle_length
from .env import MAX_ROUNDS, RoundRecord


class PolicyKind(str, Enum):
    INSTANTANEOUS = "instantaneous_swap_asap"
    WB = "wb_swap_asap"
    PREDICTIVE = "predictive_swap_asap"


@dataclass(frozen=True)
class ChainParams:
    n: int
    p_e: float
    p_s: float
    t_cut: float = UNBOUNDED
    k: int = 0


class EpisodeResult(NamedTuple):
    delivery: int | None
    trace: list[RoundRecord]
    truncated: bool
    # rounds elapsed up to and including the terminal round
    rounds: int | None = None


def swap_mask(state: ChainState) -> tuple[int, ...]:
    """Bits ``a_0..a_{n-2}``; ``a_i = 1`` for inner nodes holding two links."""
    return (0,) + tuple(int(chain.swap_would_succeed(state, i)) for i in range(1, state.n - 1))


def eg_mask(state: ChainState) -> tuple[int, ...]:
    """Bits for segments whose two facing qubits are both free.

    Once the end-to-end link exists there is nothing left to generate.
    """
    if chain.is_end_to_end(state):
        return (0,) * (state.n - 1)
    busy_right = {a for a, _ in state.links}
    busy_left = {b for _, b in state.links}
    return tuple(int(i not in busy_right and i + 1 not in busy_left) for i in range(state.n - 1))


def instantaneous_step(state: ChainState) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return swap_mask(state), eg_mask(state)


def _swap_round(state, mask, p_s, rng):
    outcomes = []
    for i in range(1, state.n - 1):
        if mask[i]:
            draw = rng.random() < p_s
            outcomes.append(Result("swap", i, int(draw and chain.swap_would_succeed(state, i)), -1))
            state = chain.apply_swap(state, i, draw)
    return state, outcomes


def _eg_round(state, mask, p_e, rng):
    outcomes = []
    for i in range(state.n - 1):
        if mask[i]:
            draw = rng.random() < p_e
            outcomes.append(Result("eg", i, int(draw), -1))
            state = chain.apply_entangle(state, i, draw)
    return state, outcomes


def run_instantaneous(params, seed, cap: int = MAX_ROUNDS, record: bool = True) -> EpisodeResult:
    """Swap-asap with full, immediate knowledge of the chain.

    ``cap`` bounds the number of time steps.
    """
    rng = np.random.default_rng(seed)
    n, p_e, p_s = params.n, params.p_e, params.p_s
    state = chain.new_chain(n, params.t_cut)
    trace: list[RoundRecord] = []
    t = 0
    while t < cap:
        mask = swap_mask(state)
        state, res = _swap_round(state, mask, p_s, rng)
        done = chain.is_end_to_end(state)
        if record:
            trace.append(RoundRecord(0, 2 * t, "swap", mask, tuple(res), 0 if done else -1, done))
        if done:
            return EpisodeResult(t, trace, False, 2 * t + 1)
        mask = eg_mask(state)
        state, res = _eg_round(state, mask, p_e, rng)
        done = chain.is_end_to_end(state)
        if record:
            trace.append(RoundRecord(0, 2 * t + 1, "eg", mask, tuple(res), 0 if done else -1, done))
        if done:
            return EpisodeResult(t + 1, trace, False, 2 * t + 2)
        state = chain.advance_age(state)
        t += 1
    return EpisodeResult(None, trace, True)


def wb_inner_cutoff(t_cut: float, cycle: int) -> float:
    if t_cut == UNBOUNDED:
        return UNBOUNDED
    inner = int(t_cut) // cycle
    if inner < 1:
        raise ValueError(f"t_cut={t_cut} is shorter than one broadcast cycle ({cycle} steps)")
    return inner


def run_wb(params, k: int | None, seed, cap: int = MAX_ROUNDS, record: bool = True) -> EpisodeResult:
    """Wait-for-broadcast swap-asap for an agent at node ``k``.

    Every action round is followed by a wait until all outcomes are back, so
    the policy is swap-asap slowed down by the broadcast cycle. It is
    simulated as instantaneous swap-asap with the cutoff divided by the cycle
    length, and the delivery time is scaled back up. The episode ends on a
    completed broadcast, so it spans whole time steps of two rounds each.
    """
    k = params.k if k is None else k
    cycle = wb_cycle_length(DelayParams(params.n, k))
    inner = ChainParams(params.n, params.p_e, params.p_s, wb_inner_cutoff(params.t_cut, cycle), k)
    res = run_instantaneous(inner, seed, cap=max(cap // cycle, 1), record=record)
    if res.truncated:
        return res
    delivery = res.delivery * cycle
    return EpisodeResult(delivery, res.trace, False, 2 * delivery)


def run_wb_default(params, seed, cap: int = MAX_ROUNDS, record: bool = True) -> EpisodeResult:
    """:func:`run_wb` with the agent node taken from ``params.k``."""
    return run_wb(params, None, seed, cap, record)


def run_predictive(params, seed, cap: int = MAX_ROUNDS, record: bool = True, info: list | None = None) -> EpisodeResult:
    """Predictive swap-asap.

    Every node acts on a shared predicted chain driven by one prediction RNG
    stream; real outcomes come from an independent stream. Once the
    prediction shows an end-to-end link the nodes spend ``n - 1`` time steps
    confirming it. A wrong prediction is replaced by the true chain.

    ``info``, when given, collects ``(round, predicted, true)`` after every round.
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    pred_seq, true_seq = seed.spawn(2)
    pred_rng = np.random.default_rng(pred_seq)
    true_rng = np.random.default_rng(true_seq)
    n, p_e, p_s = params.n, params.p_e, params.p_s
    truth = chain.new_chain(n, params.t_cut)
    pred = truth
    trace: list[RoundRecord] = []
    idle = (0,) * (n - 1)
    t = 0  # current time step; also the number of agings applied so far

    def act(kind, mask):
        nonlocal truth, pred
        res = []
        for i in range(n - 1):
            if not mask[i] or (kind == "swap" and i == 0):
                continue
            if kind == "swap":
                guess = pred_rng.random() < p_s
                draw = true_rng.random() < p_s
                res.append(Result("swap", i, int(draw and chain.swap_would_succeed(truth, i)), -1))
                pred = chain.apply_swap(pred, i, guess)
                truth = chain.apply_swap(truth, i, draw)
            else:
                guess = pred_rng.random() < p_e
                draw = true_rng.random() < p_e
                res.append(Result("eg", i, int(draw), -1))
                pred = chain.apply_entangle(pred, i, guess)
                truth = chain.apply_entangle(truth, i, draw)
        return tuple(res)

    while t < cap:
        claimed_at = None
        for kind in ("swap", "eg"):
            mask = swap_mask(pred) if kind == "swap" else eg_mask(pred)
            res = act(kind, mask)
            r = 2 * t + (kind == "eg")
            if info is not None:
                info.append((r, pred, truth))
            if chain.is_end_to_end(pred):
                claimed_at = t if kind == "swap" else t + 1
                if record:
                    trace.append(RoundRecord(0, r, kind, mask, res, -1, False))
                break
            if record:
                trace.append(RoundRecord(0, r, kind, mask, res, -1, False))
        if claimed_at is None:
            truth = chain.advance_age(truth)
            pred = chain.advance_age(pred)
            t += 1
            continue

        # confirmation: everyone waits while the news crosses the chain
        finish = claimed_at + n - 1
        last_round = 2 * t + (1 if trace and trace[-1].kind == "eg" else 0) if record else None
        while t < finish:
            truth = chain.advance_age(truth)
            t += 1
        if record:
            r = last_round + 1
            while r < 2 * finish:
                trace.append(RoundRecord(0, r, "swap" if r % 2 == 0 else "eg", idle, (), -1, False))
                r += 1
        if chain.is_end_to_end(truth):
            if record:
                last = trace[-1]
                trace[-1] = last._replace(reward=0, done=True)
            return EpisodeResult(finish, trace, False, 2 * finish)
        pred = truth
    return EpisodeResult(None, trace, True)
