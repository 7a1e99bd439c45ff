"""Monte-Carlo estimation, the exact swap-asap oracle, sweeps and trace export."""

from __future__ import annotations

import csv
import itertools
import math
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import chain
from .chain import UNBOUNDED, ChainState
from .env import MAX_ROUNDS, RoundRecord
from .policies import (
    ChainParams,
    EpisodeResult,
    eg_mask,
    run_instantaneous,
    run_predictive,
    run_wb_default,
    swap_mask,
)

SWEEP_COLUMNS = (
    "policy", "n", "k", "p_s", "p_e", "t_cut", "episodes",
    "mean_delivery_timesteps", "stderr", "truncated", "omitted",
)


class MCEstimate(NamedTuple):
    mean: float
    stderr: float
    truncations: int
    episodes: int


def episode_seed(seed: int, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((seed, episode))


def _deliveries(runner, config, start: int, stop: int, cap: int, seed: int, unit: str) -> list[int | None]:
    out = []
    for ep in range(start, stop):
        res = runner(config, episode_seed(seed, ep), cap=cap, record=False)
        if res.truncated:
            out.append(None)
        else:
            out.append(res.rounds if unit == "rounds" else res.delivery)
    return out


def _picklable(obj) -> bool:
    try:
        pickle.dumps(obj)
    except (pickle.PicklingError, AttributeError, TypeError):
        return False
    return True


def mc_estimate(runner: Callable[..., EpisodeResult], config, episodes: int,
                cap: int = MAX_ROUNDS, seed: int = 0, unit: str = "timesteps",
                jobs: int = 1) -> MCEstimate:
    """Mean delivery time over ``episodes`` independently seeded episodes.

    Truncated episodes are counted but left out of the mean. ``unit`` is
    ``"timesteps"`` or ``"rounds"``. Episode ``i`` always uses the seed
    derived from ``(seed, i)``, so the estimate does not depend on ``jobs``.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    if unit not in ("timesteps", "rounds"):
        raise ValueError(f"unknown unit {unit!r}")
    if jobs > 1 and episodes > 1 and _picklable(runner):
        bounds = np.linspace(0, episodes, min(jobs, episodes) + 1).astype(int)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_deliveries, itertools.repeat(runner), itertools.repeat(config),
                             bounds[:-1], bounds[1:], itertools.repeat(cap),
                             itertools.repeat(seed), itertools.repeat(unit))
            results = [v for part in parts for v in part]
    else:
        results = _deliveries(runner, config, 0, episodes, cap, seed, unit)
    values = [v for v in results if v is not None]
    truncated = len(results) - len(values)
    if not values:
        return MCEstimate(math.nan, math.nan, truncated, episodes)
    arr = np.asarray(values, dtype=float)
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return MCEstimate(float(arr.mean()), stderr, truncated, episodes)


def runner_for(kind: str) -> Callable[..., EpisodeResult]:
    if kind in ("instantaneous", "instantaneous_swap_asap"):
        return run_instantaneous
    if kind in ("predictive", "predictive_swap_asap"):
        return run_predictive
    if kind in ("wb", "wb_swap_asap"):
        return run_wb_default
    raise ValueError(f"unknown policy {kind!r}")


# --- exact oracle -----------------------------------------------------------

class OracleResult(NamedTuple):
    expected: float
    residual: float
    n_states: int


def _branches(state: ChainState, kind: str, p: float):
    """Yield ``(probability, next_state)`` for one round of swap-asap."""
    if kind == "swap":
        targets = [i for i, b in enumerate(swap_mask(state)) if b and i > 0]
        apply = chain.apply_swap
    else:
        targets = [i for i, b in enumerate(eg_mask(state)) if b]
        apply = chain.apply_entangle
    out: dict[tuple, list] = {}
    for draws in itertools.product((True, False), repeat=len(targets)):
        prob = 1.0
        nxt = state
        for i, ok in zip(targets, draws):
            prob *= p if ok else 1.0 - p
            nxt = apply(nxt, i, ok)
        if prob == 0.0:
            continue
        key = nxt.key()
        if key in out:
            out[key][0] += prob
        else:
            out[key] = [prob, nxt]
    return [(prob, s) for prob, s in out.values()]


def _canonical(state: ChainState) -> ChainState:
    # without a cutoff ages never influence swap-asap
    if state.t_cut == UNBOUNDED:
        return ChainState(state.n, state.t_cut, {l: 0 for l in state.links})
    return state


def exact_expected_delivery_full(params, max_states: int = 200_000) -> OracleResult:
    """Expected delivery time of instantaneous swap-asap by solving the hitting-time system.

    The chain is observed at the start of every time step. From state ``s``
    the expected remaining time is ``m(s) = b(s) + sum_s' P(s, s') m(s')``
    where ``b(s)`` is the probability that the step does not end in its swap
    round.
    """
    start = chain.new_chain(params.n, params.t_cut)
    index = {start.key(): 0}
    states = [start]
    rows, cols, vals = [], [], []
    b = []
    pos = 0
    while pos < len(states):
        s = states[pos]
        stay = 0.0
        for p1, after_swap in _branches(s, "swap", params.p_s):
            if chain.is_end_to_end(after_swap):
                continue
            stay += p1
            for p2, after_eg in _branches(after_swap, "eg", params.p_e):
                if chain.is_end_to_end(after_eg):
                    continue
                nxt = _canonical(chain.advance_age(after_eg))
                key = nxt.key()
                j = index.get(key)
                if j is None:
                    j = index[key] = len(states)
                    states.append(nxt)
                    if len(states) > max_states:
                        raise ValueError(f"state space exceeds {max_states} states")
                rows.append(pos)
                cols.append(j)
                vals.append(p1 * p2)
        b.append(stay)
        pos += 1
    size = len(states)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    A = (sp.identity(size, format="csr") - P).tocsc()
    rhs = np.asarray(b)
    if size == 1:
        diag = A.toarray()[0, 0]
        m = rhs / diag if diag != 0 else np.array([np.inf])
    else:
        m = np.atleast_1d(spla.spsolve(A, rhs))
    if not np.all(np.isfinite(m)):
        raise ValueError("hitting-time system is singular; the end-to-end link is unreachable")
    residual = float(np.max(np.abs(A @ m - rhs)))
    return OracleResult(float(m[0]), residual, size)


def exact_expected_delivery(params, max_states: int = 200_000) -> float:
    return exact_expected_delivery_full(params, max_states).expected


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepConfig:
    n: int = 4
    k: int = 2
    t_cut: int = 12
    p_s_values: Sequence[float] = (0.5, 0.75, 1.0)
    p_e_values: Sequence[float] = tuple(round(0.1 * i, 1) for i in range(1, 11))
    episodes: int = 1000
    cap: int = MAX_ROUNDS
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        for p in list(self.p_s_values) + list(self.p_e_values):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")


class SweepRow(NamedTuple):
    policy: str
    n: int
    k: int
    p_s: float
    p_e: float
    t_cut: float
    episodes: int
    mean_delivery_timesteps: float
    stderr: float
    truncated: int
    omitted: bool


def sweep(cfg: SweepConfig, policies: Iterable[str], rl_runners: dict | None = None,
          jobs: int = 1, unit: str = "timesteps") -> list[SweepRow]:
    """Estimate every ``(policy, p_s, p_e)`` cell of the grid.

    ``rl_runners`` maps ``(p_s, p_e)`` to an episode runner for the ``"rl"``
    policy, typically built from a trained checkpoint.
    """
    rows = []
    for policy in policies:
        for p_s in cfg.p_s_values:
            for p_e in cfg.p_e_values:
                params = ChainParams(cfg.n, p_e, p_s, cfg.t_cut, cfg.k)
                if policy == "rl":
                    if not rl_runners or (p_s, p_e) not in rl_runners:
                        raise ValueError(f"no trained policy for p_s={p_s}, p_e={p_e}")
                    runner = rl_runners[(p_s, p_e)]
                else:
                    runner = runner_for(policy)
                est = mc_estimate(runner, params, cfg.episodes, cfg.cap, cfg.seed, unit=unit, jobs=jobs)
                rows.append(SweepRow(policy, cfg.n, cfg.k, p_s, p_e, cfg.t_cut, cfg.episodes,
                                     est.mean, est.stderr, est.truncations, est.truncations > 0))
    return rows


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_sweep_csv(rows: Iterable[SweepRow], path, unit: str = "timesteps") -> None:
    """Write the sweep table to a path or an open text file.

    With ``unit="rounds"`` the mean column is headed ``mean_delivery_rounds``.
    """
    header = list(SWEEP_COLUMNS)
    if unit == "rounds":
        header[header.index("mean_delivery_timesteps")] = "mean_delivery_rounds"
    if hasattr(path, "write"):
        _write_rows(path, header, rows)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- traces -----------------------------------------------------------------

def action_label(kind: str, bits: Sequence[int]) -> str:
    """Legend label: ``EG:101`` lists every segment, ``Swap:11`` only inner nodes."""
    if kind == "eg":
        return "EG:" + "".join(str(int(b)) for b in bits)
    return "Swap:" + "".join(str(int(b)) for b in bits[1:])


def trace_labels(trace: Sequence[RoundRecord]) -> list[str]:
    return [action_label(rec.kind, rec.action_bits) for rec in trace]


def export_trace(traces: Sequence[Sequence[RoundRecord]], path=None) -> list[list[str]]:
    """One row per episode, one column per round; shorter episodes are padded with ``""``."""
    rows = [trace_labels(t) for t in traces]
    width = max((len(r) for r in rows), default=0)
    rows = [r + [""] * (width - len(r)) for r in rows]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode"] + [f"round_{j}" for j in range(width)])
            for i, r in enumerate(rows):
                w.writerow([i] + r)
    return rows


def reward_sum_from_labels(row: Sequence[str]) -> int:
    """Return of a terminated episode: -1 for every round except the terminal one."""
    length = sum(1 for cell in row if cell)
    return -(length - 1)
