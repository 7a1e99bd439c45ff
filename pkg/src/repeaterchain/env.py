"""Episodic environment for a global agent steering a repeater chain with delays.

Each time step consists of two rounds: even rounds carry swap instructions,
odd rounds carry entanglement-generation (EG) instructions. Instructions
travel to their target for a number of time steps, execute there on the
hidden chain, and the outcome travels back to the agent. The agent only sees
a rolling window of what it sent and what came back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple, Sequence

import numpy as np

from . import chain
from .chain import ChainState
from .delays import (
    DelayParams,
    Instruction,
    MessageBus,
    Result,
    delta_eg,
    delta_swap,
    delta_swap_result,
)

MAX_ROUNDS = 50_000

# columns of a window row
SWAP_SENT, SWAP_RESULT, EG_SENT, EG_RESULT = range(4)
NO_RESULT = -1


@dataclass(frozen=True)
class EnvConfig:
    n: int = 4
    p_e: float = 1.0
    p_s: float = 1.0
    t_cut: int = 12
    k: int = 2
    seed: int = 0
    max_rounds: int = MAX_ROUNDS
    # all instructions and results arrive in the round they are sent
    zero_delay: bool = False
    eq1_literal: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not (0.0 <= self.p_e <= 1.0 and 0.0 <= self.p_s <= 1.0):
            raise ValueError("success probabilities must lie in [0, 1]")
        if int(self.t_cut) != self.t_cut or self.t_cut < 1:
            raise ValueError(f"t_cut must be a positive integer, got {self.t_cut}")
        if not 0 <= self.k <= self.n - 1:
            raise ValueError(f"agent node k={self.k} outside [0, {self.n - 1}]")

    @property
    def delays(self) -> DelayParams:
        return DelayParams(self.n, self.k, self.eq1_literal)

    @property
    def hold_rounds(self) -> int:
        """Rounds the end-to-end link must survive before the episode ends."""
        return 2 * max(self.k, self.n - 1 - self.k)

    @property
    def n_actions(self) -> int:
        return 2 ** (self.n - 1)

    @property
    def obs_size(self) -> int:
        return 4 * 2 * self.n * self.t_cut


@dataclass
class HistoryObservation:
    """Window of shape ``(t_cut, n, 2, 4)``; row 0 is the current time step.

    The last axis holds ``(swap sent, swap result, eg sent, eg result)`` for
    qubit side 0 (left) and 1 (right) of every node. ``round`` is the index
    of the round the agent acts in next.
    """

    window: np.ndarray
    round: int = 0

    @property
    def next_kind(self) -> str:
        return "swap" if self.round % 2 == 0 else "eg"

    def __eq__(self, other):
        if not isinstance(other, HistoryObservation):
            return NotImplemented
        return self.round == other.round and np.array_equal(self.window, other.window)


def blank_window(n: int, t_cut: int) -> np.ndarray:
    w = np.zeros((t_cut, n, 2, 4), dtype=np.int8)
    w[..., SWAP_RESULT] = NO_RESULT
    w[..., EG_RESULT] = NO_RESULT
    return w


def encode_observation(h: HistoryObservation) -> np.ndarray:
    return h.window.astype(np.float32).ravel()


def decode_observation(vec: np.ndarray, n: int, t_cut: int, round: int = 0) -> HistoryObservation:
    vec = np.asarray(vec)
    if vec.size != 4 * 2 * n * t_cut:
        raise ValueError(f"expected {4 * 2 * n * t_cut} entries, got {vec.size}")
    return HistoryObservation(np.rint(vec).astype(np.int8).reshape(t_cut, n, 2, 4), round)


def policy_features(h: HistoryObservation) -> np.ndarray:
    """Encoded window plus a flag that is 1 when the next round is an EG round."""
    flat = encode_observation(h)
    return np.concatenate([flat, np.array([h.round % 2], dtype=np.float32)])


def mask_from_index(index: int, n: int) -> tuple[int, ...]:
    return tuple((index >> j) & 1 for j in range(n - 1))


def index_from_mask(mask: Sequence[int]) -> int:
    return sum(int(b) << j for j, b in enumerate(mask))


class RoundRecord(NamedTuple):
    episode: int
    round: int
    kind: str
    action_bits: tuple[int, ...]
    delivered_results: tuple[Result, ...]
    reward: int
    done: bool


@dataclass
class StepOutcome:
    observation: HistoryObservation
    reward: int
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


class RepeaterEnv:
    """Global-agent environment over a hidden :class:`ChainState`.

    ``info`` carries the true chain for diagnostics; policies must only use
    the observation.
    """

    def __init__(self, config: EnvConfig, record: bool = True):
        self.config = config
        self.record = record
        self._delays = config.delays
        n = config.n
        if config.zero_delay:
            self._eg_delay = [0] * (n - 1)
            self._swap_delay = [0] * n
            self._swap_result_delay = 0
        else:
            self._eg_delay = [delta_eg(i, self._delays) for i in range(n - 1)]
            self._swap_delay = [delta_swap(i, self._delays) for i in range(n)]
            self._swap_result_delay = delta_swap_result(self._delays)
        self._rng = np.random.default_rng(config.seed)
        self.episode = -1
        self._done = True

    def reset(self, seed: int | None = None) -> StepOutcome:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.config
        self.episode += 1
        self.state = chain.new_chain(cfg.n, cfg.t_cut)
        self._instructions = MessageBus()
        self._results = MessageBus()
        self._window = blank_window(cfg.n, cfg.t_cut)
        self._round = 0
        self._hold: int | None = None
        self._done = False
        self.truncated = False
        self.trace: list[RoundRecord] = []
        return StepOutcome(self._observe(), 0, False, {"round": 0, "state": self.state, "truncated": False})

    @property
    def round(self) -> int:
        return self._round

    @property
    def done(self) -> bool:
        return self._done

    def _observe(self) -> HistoryObservation:
        return HistoryObservation(self._window.copy(), self._round)

    def _coerce(self, action) -> tuple[int, ...]:
        n = self.config.n
        if isinstance(action, (int, np.integer)):
            if not 0 <= action < 2 ** (n - 1):
                raise ValueError(f"action index {action} out of range")
            return mask_from_index(int(action), n)
        bits = tuple(int(b) for b in action)
        if len(bits) != n - 1 or any(b not in (0, 1) for b in bits):
            raise ValueError(f"action must be {n - 1} bits, got {action!r}")
        return bits

    def step(self, action) -> StepOutcome:
        if self._done:
            raise RuntimeError("episode is over; call reset()")
        cfg = self.config
        n = cfg.n
        bits = self._coerce(action)
        r = self._round
        kind = "swap" if r % 2 == 0 else "eg"
        if kind == "swap" and r > 0:
            self._window[1:] = self._window[:-1]
            self._window[0] = blank_window(n, 1)[0]
        row = self._window[0]

        # issue instructions
        if kind == "swap":
            for i in range(1, n - 1):
                if bits[i]:
                    self._instructions.send(Instruction("swap", i, r), r + 2 * self._swap_delay[i])
                    row[i, :, SWAP_SENT] = 1
        else:
            for i in range(n - 1):
                if bits[i]:
                    self._instructions.send(Instruction("eg", i, r), r + 2 * self._eg_delay[i])
                    row[i, 1, EG_SENT] = 1
                    row[i + 1, 0, EG_SENT] = 1

        had_e2e = chain.is_end_to_end(self.state)
        broken = False

        # execute arrived instructions of this round's kind, ascending target
        arrived = self._instructions.collect(r)
        todo = sorted((ins for ins in arrived if ins.kind == kind), key=lambda ins: ins.target)
        for ins in arrived:
            if ins.kind != kind:
                self._instructions.send(ins, r + 1)
        executed = []
        for ins in todo:
            i = ins.target
            if kind == "swap":
                draw = self._rng.random() < cfg.p_s
                ok = draw and chain.swap_would_succeed(self.state, i)
                self.state = chain.apply_swap(self.state, i, draw)
                due = r + 2 * self._swap_result_delay
            else:
                ok = self._rng.random() < cfg.p_e
                self.state = chain.apply_entangle(self.state, i, ok)
                due = r + 2 * self._eg_delay[i]
            res = Result(kind, i, int(ok), ins.round_issued)
            executed.append(res)
            self._results.send(res, due)
            if had_e2e and not chain.is_end_to_end(self.state):
                broken = True

        # results reaching the agent this round
        delivered = []
        for res in self._results.collect(r):
            if res.kind != kind:
                self._results.send(res, r + 1)
                continue
            delivered.append(res)
            if kind == "swap":
                row[res.target, :, SWAP_RESULT] = res.outcome
            else:
                row[res.target, 1, EG_RESULT] = res.outcome
                row[res.target + 1, 0, EG_RESULT] = res.outcome
        delivered.sort(key=lambda res: res.target)

        if kind == "eg":
            self.state = chain.advance_age(self.state)
            if had_e2e and not chain.is_end_to_end(self.state):
                broken = True

        if chain.is_end_to_end(self.state):
            self._hold = self._hold + 1 if (had_e2e and not broken and self._hold is not None) else 0
        else:
            self._hold = None
        done = self._hold is not None and self._hold >= cfg.hold_rounds
        reward = 0 if done else -1

        self._round += 1
        self._done = done
        if not done and self._round >= cfg.max_rounds:
            self.truncated = True
            self._done = True
        if self.record:
            self.trace.append(RoundRecord(self.episode, r, kind, bits, tuple(delivered), reward, done))
        info = {
            "round": r,
            "state": self.state,
            "truncated": self.truncated,
            "executed": tuple(executed),
            "delivered": tuple(delivered),
        }
        return StepOutcome(self._observe(), reward, done, info)


def delivery_time(trace: Sequence[RoundRecord]) -> int | None:
    """Time steps until the terminal round, or ``None`` for an unfinished episode."""
    if not trace or not trace[-1].done:
        return None
    return delivery_time_from_round(trace[-1].round)


def delivery_time_from_round(terminal_round: int) -> int:
    return math.ceil(terminal_round / 2)


def replay_chain(config: EnvConfig, trace: Sequence[RoundRecord]) -> ChainState:
    """Rebuild the hidden chain from a zero-delay trajectory's delivered results."""
    if not config.zero_delay:
        raise ValueError("replay needs results to arrive in the round they are produced")
    state = chain.new_chain(config.n, config.t_cut)
    for rec in trace:
        for res in rec.delivered_results:
            if res.kind == "swap":
                state = chain.apply_swap(state, res.target, bool(res.outcome))
            else:
                state = chain.apply_entangle(state, res.target, bool(res.outcome))
        if rec.kind == "eg":
            state = chain.advance_age(state)
    return state


def scripted_optimal_actions(n: int, k: int) -> list[tuple[int, ...]]:
    """Open-loop action list that is fastest when every action succeeds.

    All segments are timed to generate in the same time step ``T``, equal to
    the largest EG delay, and every inner node swaps in step ``T + 1``. Once
    the list runs out the agent keeps idling.
    """
    params = DelayParams(n, k)
    T = max(delta_eg(i, params) for i in range(n - 1))
    swap_step = T + 1 if n > 2 else None
    rounds = 2 * (T + 1) + 1
    actions = [[0] * (n - 1) for _ in range(rounds)]
    for i in range(n - 1):
        t_issue = T - delta_eg(i, params)
        actions[2 * t_issue + 1][i] = 1
    if swap_step is not None:
        for i in range(1, n - 1):
            t_issue = swap_step - delta_swap(i, params)
            actions[2 * t_issue][i] = 1
    return [tuple(a) for a in actions]


class ScriptedPolicy:
    """Plays a fixed per-round action list, then idles."""

    def __init__(self, actions: Sequence[Sequence[int]], n: int):
        self.actions = [tuple(a) for a in actions]
        self.idle = (0,) * (n - 1)

    def __call__(self, obs: HistoryObservation) -> tuple[int, ...]:
        if obs.round < len(self.actions):
            return self.actions[obs.round]
        return self.idle


def run_episode(env: RepeaterEnv, policy, seed: int | None = None) -> list[RoundRecord]:
    """Roll one episode; ``policy`` maps a :class:`HistoryObservation` to an action."""
    out = env.reset(seed)
    while not env.done:
        out = env.step(policy(out.observation))
    return env.trace


def with_overrides(config: EnvConfig, **kw) -> EnvConfig:
    return replace(config, **kw)
