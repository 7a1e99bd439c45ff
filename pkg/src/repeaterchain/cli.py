"""Command-line entry point.

Every subcommand reads optional settings from a ``.cfg`` file (``--config``);
flags given on the command line win over the file, which wins over the
built-in defaults. Each file written is accompanied by a
``<file>.manifest.json`` describing the run.

Exit codes: 0 success, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
import time
from importlib import metadata
from pathlib import Path

from .chain import UNBOUNDED
from .env import EnvConfig, RepeaterEnv, ScriptedPolicy, run_episode, scripted_optimal_actions
from .experiments import (
    SweepConfig,
    SweepRow,
    exact_expected_delivery_full,
    export_trace,
    mc_estimate,
    runner_for,
    sweep,
    write_sweep_csv,
)
from .policies import ChainParams

DEFAULT_SEED = 2024
POLICIES = ("instantaneous", "wb", "predictive")

log = logging.getLogger("repeaterchain")


class UsageError(Exception):
    def __init__(self, message: str, show_usage: bool = True):
        super().__init__(message)
        self.show_usage = show_usage


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _float_or_inf(text) -> float:
    if isinstance(text, (int, float)):
        return text
    if str(text).strip().lower() in ("inf", "unbounded", "none"):
        return UNBOUNDED
    value = float(text)
    return int(value) if value.is_integer() else value


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _str_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v for v in str(text).replace(",", " ").split() if v]


# option name -> (converter, default)
COMMON = {
    "n": (int, 4),
    "k": (int, 2),
    "pe": (float, 1.0),
    "ps": (float, 1.0),
    "tcut": (_float_or_inf, 12),
    "seed": (int, DEFAULT_SEED),
    "episodes": (int, 1000),
    "cap": (int, 50_000),
    "jobs": (int, os.cpu_count() or 1),
    "unit": (str, "timesteps"),
    "out": (str, None),
}

COMMANDS = {
    "simulate": {**COMMON, "policy": (str, None)},
    "train": {
        **COMMON,
        "restarts": (int, 20),
        "steps": (int, 500_000),
        "n_envs": (int, 8),
        "n_steps": (int, 256),
        "checkpoint_interval": (int, 10_240),
        "eval_episodes": (int, 10),
        "target": (float, None),
        "out_dir": (str, "runs/train"),
    },
    "eval": {**COMMON, "checkpoint": (str, None)},
    "sweep": {
        **COMMON,
        "policies": (_str_list, list(POLICIES)),
        "ps_values": (_float_list, [0.5, 0.75, 1.0]),
        "pe_values": (_float_list, [round(0.1 * i, 1) for i in range(1, 11)]),
        "checkpoint": (str, None),
    },
    "oracle": {**COMMON, "tcut": (_float_or_inf, UNBOUNDED), "max_states": (int, 200_000)},
    "trace": {**COMMON, "policy": (str, "scripted"), "episodes": (int, 10), "checkpoint": (str, None)},
}

REQUIRED = {"simulate": ["policy"], "eval": ["checkpoint"]}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}", show_usage=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repeaterchain", description="Repeater-chain policies, training and experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.commands = sub.choices

    def common(p, extra=()):
        p.add_argument("--config", help="settings file (.cfg); flags override it")
        p.add_argument("--n", type=int, help="number of nodes")
        p.add_argument("--k", type=int, help="node holding the agent")
        p.add_argument("--pe", type=float, help="entanglement generation success probability")
        p.add_argument("--ps", type=float, help="swap success probability")
        p.add_argument("--tcut", type=_float_or_inf, help="cutoff in time steps ('inf' for none)")
        p.add_argument("--seed", type=int, help=f"base seed (default {DEFAULT_SEED})")
        p.add_argument("--episodes", type=int, help="number of episodes")
        p.add_argument("--cap", type=int, help="per-episode step cap")
        p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
        p.add_argument("--unit", choices=("timesteps", "rounds"), help="unit for delivery times")
        p.add_argument("--out", help="output file (default: stdout)")
        for flag, kw in extra:
            p.add_argument(flag, **kw)

    p = sub.add_parser("simulate", help="Monte-Carlo estimate for one fixed policy")
    common(p, [("--policy", dict(choices=POLICIES))])

    p = sub.add_parser("train", help="train an agent and save the best checkpoint")
    common(p, [
        ("--restarts", dict(type=int)),
        ("--steps", dict(type=int, help="environment steps per restart")),
        ("--n-envs", dict(type=int, dest="n_envs")),
        ("--n-steps", dict(type=int, dest="n_steps", help="rollout length per environment")),
        ("--checkpoint-interval", dict(type=int, dest="checkpoint_interval")),
        ("--eval-episodes", dict(type=int, dest="eval_episodes")),
        ("--target", dict(type=float, help="stop a restart once greedy delivery reaches this")),
        ("--out-dir", dict(dest="out_dir")),
    ])

    p = sub.add_parser("eval", help="greedy evaluation of a trained checkpoint")
    common(p, [("--checkpoint", dict())])

    p = sub.add_parser("sweep", help="estimate every (policy, p_s, p_e) cell of a grid")
    common(p, [
        ("--policies", dict(type=_str_list)),
        ("--ps-values", dict(type=_float_list, dest="ps_values")),
        ("--pe-values", dict(type=_float_list, dest="pe_values")),
        ("--checkpoint", dict(help="trained agent used for the 'rl' policy")),
    ])

    p = sub.add_parser("oracle", help="exact expected delivery of instantaneous swap-asap")
    common(p, [("--max-states", dict(type=int, dest="max_states"))])

    p = sub.add_parser("trace", help="export per-episode action labels as a heatmap CSV")
    common(p, [
        ("--policy", dict(choices=("scripted", "rl") + POLICIES)),
        ("--checkpoint", dict()),
    ])
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags."""
    options = COMMANDS[args.command]
    values = {name: default for name, (_, default) in options.items()}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        section = cp[args.command] if cp.has_section(args.command) else cp[cp.default_section]
        for key, raw in section.items():
            name = key.replace("-", "_")
            if name not in options:
                raise UsageError(f"unknown setting {key!r} in {args.config}")
            try:
                values[name] = options[name][0](raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key!r} in {args.config}: {exc}") from None
    for name in options:
        given = getattr(args, name, None)
        if given is not None:
            values[name] = given
    for name in REQUIRED.get(args.command, []):
        if values.get(name) is None:
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")
    if values["unit"] not in ("timesteps", "rounds"):
        raise UsageError(f"unknown unit {values['unit']!r}")
    if values["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    return values


def write_manifest(target: Path, command: str, config: dict, outputs: list[str]) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "outputs": outputs,
        "version": _version(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = Path(str(target) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _jsonable(values: dict) -> dict:
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in values.items()}


def _chain_params(v: dict) -> ChainParams:
    return ChainParams(v["n"], v["pe"], v["ps"], v["tcut"], v["k"])


def _env_config(v: dict) -> EnvConfig:
    if v["tcut"] == UNBOUNDED:
        raise UsageError("the environment needs a finite --tcut")
    return EnvConfig(v["n"], v["pe"], v["ps"], int(v["tcut"]), v["k"], seed=v["seed"], max_rounds=v["cap"])


def _emit_table(rows, v, command):
    if v["out"]:
        write_sweep_csv(rows, v["out"], v["unit"])
        write_manifest(Path(v["out"]), command, _jsonable(v), [v["out"]])
    else:
        write_sweep_csv(rows, sys.stdout, v["unit"])


def cmd_simulate(v: dict) -> int:
    params = _chain_params(v)
    est = mc_estimate(runner_for(v["policy"]), params, v["episodes"], v["cap"], v["seed"],
                      unit=v["unit"], jobs=v["jobs"])
    row = SweepRow(v["policy"], v["n"], v["k"], v["ps"], v["pe"], v["tcut"], v["episodes"],
                   est.mean, est.stderr, est.truncations, est.truncations > 0)
    _emit_table([row], v, "simulate")
    return 0


def cmd_train(v: dict) -> int:
    from .ppo import TrainConfig, save_checkpoint, train, write_curve_csv

    cfg = _env_config(v)
    tc = TrainConfig(
        total_steps=v["steps"], n_steps=v["n_steps"], n_envs=v["n_envs"], restarts=v["restarts"],
        checkpoint_interval=v["checkpoint_interval"], eval_episodes=v["eval_episodes"],
        target_delivery=v["target"],
    )
    out_dir = Path(v["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(cfg, tc, v["seed"])
    ckpt = out_dir / "agent.pt"
    curve = out_dir / "curve.csv"
    save_checkpoint(ckpt, result.params, cfg, tc, result.best_delivery,
                    {"restart_scores": result.restart_scores, "best_restart": result.best_restart,
                     "best_step": result.best_step})
    write_curve_csv(result.curve, curve)
    for target in (ckpt, curve):
        write_manifest(target, "train", _jsonable(v), [str(ckpt), str(curve)])
    print(f"best greedy delivery {result.best_delivery:g} time steps "
          f"(restart {result.best_restart}, step {result.best_step}); saved {ckpt}")
    return 0


def _load_agent(path):
    from .ppo import load_checkpoint

    if not path or not Path(path).exists():
        raise UsageError(f"checkpoint {path!r} not found", show_usage=False)
    return load_checkpoint(path)


def cmd_eval(v: dict) -> int:
    from .ppo import rl_runner

    model, meta = _load_agent(v["checkpoint"])
    # chain settings default to the ones the agent was trained on
    stored = meta["env_config"]
    for key, name in (("n", "n"), ("k", "k"), ("pe", "p_e"), ("ps", "p_s"), ("tcut", "t_cut")):
        if key not in v["_given"]:
            v[key] = stored[name]
    if v["n"] != stored["n"] or v["tcut"] != stored["t_cut"]:
        raise UsageError("n and tcut must match the checkpoint's observation size")
    est = mc_estimate(rl_runner(model), _chain_params(v), v["episodes"], v["cap"], v["seed"], unit=v["unit"])
    row = SweepRow("rl", v["n"], v["k"], v["ps"], v["pe"], v["tcut"], v["episodes"],
                   est.mean, est.stderr, est.truncations, est.truncations > 0)
    _emit_table([row], {k: x for k, x in v.items() if k != "_given"}, "eval")
    return 0


def cmd_sweep(v: dict) -> int:
    cfg = SweepConfig(v["n"], v["k"], v["tcut"], tuple(v["ps_values"]), tuple(v["pe_values"]),
                      v["episodes"], v["cap"], v["seed"])
    rl_runners = None
    if "rl" in v["policies"]:
        from .ppo import rl_runner

        model, _ = _load_agent(v["checkpoint"])
        run = rl_runner(model)
        rl_runners = {(ps, pe): run for ps in cfg.p_s_values for pe in cfg.p_e_values}
    for name in v["policies"]:
        if name != "rl":
            runner_for(name)
    rows = sweep(cfg, v["policies"], rl_runners, jobs=v["jobs"], unit=v["unit"])
    _emit_table(rows, v, "sweep")
    return 0


def cmd_oracle(v: dict) -> int:
    if v["unit"] != "timesteps":
        raise UsageError("the oracle reports time steps only")
    res = exact_expected_delivery_full(_chain_params(v), v["max_states"])
    text = f"{res.expected:.6g}"
    print(text)
    log.info("states %d, residual %.3g", res.n_states, res.residual)
    if v["out"]:
        Path(v["out"]).write_text(
            f"expected_delivery_timesteps,residual,n_states\n{text},{res.residual:.3g},{res.n_states}\n")
        write_manifest(Path(v["out"]), "oracle", _jsonable(v), [v["out"]])
    return 0


def cmd_trace(v: dict) -> int:
    policy = v["policy"]
    traces = []
    if policy in ("scripted", "rl"):
        cfg = _env_config(v)
        if policy == "scripted":
            agent = ScriptedPolicy(scripted_optimal_actions(cfg.n, cfg.k), cfg.n)
        else:
            agent, _ = _load_agent(v["checkpoint"])
            agent = agent.act
        env = RepeaterEnv(cfg)
        for ep in range(v["episodes"]):
            traces.append(list(run_episode(env, agent, seed=v["seed"] + ep)))
    else:
        from .experiments import episode_seed

        run = runner_for(policy)
        for ep in range(v["episodes"]):
            traces.append(run(_chain_params(v), episode_seed(v["seed"], ep), cap=v["cap"]).trace)
    if v["out"]:
        export_trace(traces, v["out"])
        write_manifest(Path(v["out"]), "trace", _jsonable(v), [v["out"]])
    else:
        for row in export_trace(traces):
            print(",".join(row))
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        values = resolve(args)
        if args.command == "eval":
            values["_given"] = {name for name in COMMON if getattr(args, name, None) is not None}
        return HANDLERS[args.command](values)
    except UsageError as exc:
        command = getattr(locals().get("args"), "command", None)
        if exc.show_usage and command in parser.commands:
            parser.commands[command].print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ValueError, RuntimeError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
