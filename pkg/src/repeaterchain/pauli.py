"""Single-qubit Pauli channels and their Fourier (lambda) representation.

Composing Pauli channels is a convolution over the phaseless Pauli group; in
the lambda basis it becomes a pointwise product. Swapping two Choi states of
Pauli channels yields the Choi state of the composed channel, so link quality
can be tracked entirely in lambda space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

TOL = 1e-12

# rows: lambda_1..lambda_4, columns: p_I, p_X, p_Y, p_Z
_FOURIER = np.array(
    [
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class PauliChannel:
    p_I: float
    p_X: float
    p_Y: float
    p_Z: float

    def __post_init__(self):
        probs = self.as_array()
        if np.any(probs < -TOL) or np.any(probs > 1 + TOL):
            raise ValueError(f"probabilities out of [0, 1]: {probs}")
        if abs(probs.sum() - 1.0) > TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_I, self.p_X, self.p_Y, self.p_Z], dtype=float)

    @property
    def fidelity(self) -> float:
        """Fidelity of the channel's Choi state with the perfect Bell pair."""
        return self.p_I


@dataclass(frozen=True)
class LambdaVector:
    l1: float
    l2: float
    l3: float
    l4: float

    def __post_init__(self):
        if abs(self.l1 - 1.0) > TOL:
            raise ValueError(f"lambda_1 must equal 1, got {self.l1!r}")
        if any(abs(v) > 1 + TOL for v in (self.l2, self.l3, self.l4)):
            raise ValueError("lambda entries must satisfy |lambda| <= 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.l1, self.l2, self.l3, self.l4], dtype=float)

    def decay_rates(self) -> tuple[float, float, float]:
        """``c_j = -ln(lambda_j)`` for j = 2..4; only defined for positive lambdas."""
        vals = (self.l2, self.l3, self.l4)
        if any(v <= 0 for v in vals):
            raise ValueError("decay rates need strictly positive lambdas")
        return tuple(-math.log(v) for v in vals)


IDENTITY = PauliChannel(1.0, 0.0, 0.0, 0.0)


def depolarizing(a: float) -> PauliChannel:
    """Uniform depolarising channel whose Choi state is the Werner state rho(a)."""
    q = (1 - a) / 4
    return PauliChannel((1 + 3 * a) / 4, q, q, q)


def to_lambda(c: PauliChannel) -> LambdaVector:
    return LambdaVector(*(_FOURIER @ c.as_array()))


def from_lambda(lam: LambdaVector) -> PauliChannel:
    # _FOURIER is symmetric and squares to 4 * identity
    return PauliChannel(*(_FOURIER @ lam.as_array() / 4))


def compose(c1: PauliChannel, c2: PauliChannel) -> PauliChannel:
    prod = to_lambda(c1).as_array() * to_lambda(c2).as_array()
    prod[0] = 1.0
    return from_lambda(LambdaVector(*prod))


def compose_all(channels: Sequence[PauliChannel]) -> PauliChannel:
    return reduce(compose, channels, IDENTITY)


# product of phaseless Paulis, indices I=0, X=1, Y=2, Z=3
_PRODUCT = (
    (0, 1, 2, 3),
    (1, 0, 3, 2),
    (2, 3, 0, 1),
    (3, 2, 1, 0),
)


def brute_force_compose(c1: PauliChannel, c2: PauliChannel) -> PauliChannel:
    """Explicit 16-term convolution. Reference implementation for tests only."""
    p1, p2 = c1.as_array(), c2.as_array()
    out = [0.0, 0.0, 0.0, 0.0]
    for a in range(4):
        for b in range(4):
            out[_PRODUCT[a][b]] += p1[a] * p2[b]
    return PauliChannel(*out)


def fidelity_from_ages(channels: Sequence[PauliChannel], ages: Sequence[int]) -> float:
    """Fidelity after applying channel ``i`` ``ages[i]`` times, for every ``i``.

    The lambdas are raised to integer powers directly so negative lambdas are
    fine.
    """
    if len(channels) != len(ages):
        raise ValueError("channels and ages must have equal length")
    lam = np.ones(4)
    for c, t in zip(channels, ages):
        if t < 0:
            raise ValueError("ages must be non-negative")
        lam = lam * to_lambda(c).as_array() ** int(t)
    return float((1.0 + lam[1] + lam[2] + lam[3]) / 4)


def age_parameters(channels: Sequence[PauliChannel], ages: Sequence[int]) -> tuple[float, float, float]:
    """Generalised ages ``sum_i c_{i,j} t_i`` for j = 2..4 (positive lambdas only)."""
    if len(channels) != len(ages):
        raise ValueError("channels and ages must have equal length")
    totals = [0.0, 0.0, 0.0]
    for c, t in zip(channels, ages):
        for j, rate in enumerate(to_lambda(c).decay_rates()):
            totals[j] += rate * t
    return tuple(totals)
