"""Simulation and policy optimisation for linear quantum repeater chains with
classical-communication delays."""

from .chain import UNBOUNDED, ChainState, new_chain
from .delays import DelayParams, wb_cycle_length
from .env import EnvConfig, RepeaterEnv
from .policies import ChainParams, run_instantaneous, run_predictive, run_wb

__all__ = [
    "UNBOUNDED",
    "ChainParams",
    "ChainState",
    "DelayParams",
    "EnvConfig",
    "RepeaterEnv",
    "new_chain",
    "run_instantaneous",
    "run_predictive",
    "run_wb",
    "wb_cycle_length",
]
