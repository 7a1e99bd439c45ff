"""Clipped-surrogate actor-critic training on :class:`RepeaterEnv`.

Defaults follow the usual PPO settings (two tanh layers of 64 units for both
the policy and the value network, clip 0.2, GAE 0.95, 2048-step rollouts,
minibatches of 64, learning rate 3e-4) with an entropy coefficient of 0.001.
Training keeps periodic greedy evaluations and returns the best one over all
restarts.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
from torch import nn
from torch.distributions import Categorical

from .env import (
    EnvConfig,
    HistoryObservation,
    RepeaterEnv,
    delivery_time_from_round,
    policy_features,
)
from .policies import EpisodeResult

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    total_steps: int = 500_000
    n_steps: int = 2048
    n_envs: int = 1
    batch_size: int = 64
    n_epochs: int = 10
    clip_range: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ent_coef: float = 0.001
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4
    hidden: tuple[int, ...] = (64, 64)
    restarts: int = 20
    checkpoint_interval: int = 10_240
    eval_episodes: int = 10
    eval_cap: int = 1_000
    train_cap: int = 5_000
    divergence_patience: int = 10
    # stop a restart once greedy delivery is this good
    target_delivery: float | None = None

    def __post_init__(self):
        if self.ent_coef < 0:
            raise ValueError("entropy coefficient must be non-negative")
        if not 0 < self.clip_range < 1:
            raise ValueError("clip ratio must lie in (0, 1)")
        if self.restarts < 1 or self.total_steps < 1:
            raise ValueError("need at least one restart and one step")
        self.hidden = tuple(self.hidden)


def _mlp(sizes: Sequence[int], out: int, out_gain: float) -> nn.Sequential:
    layers: list[nn.Module] = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lin = nn.Linear(a, b)
        nn.init.orthogonal_(lin.weight, math.sqrt(2))
        nn.init.zeros_(lin.bias)
        layers += [lin, nn.Tanh()]
    head = nn.Linear(sizes[-1], out)
    nn.init.orthogonal_(head.weight, out_gain)
    nn.init.zeros_(head.bias)
    layers.append(head)
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """Separate policy and value networks over the policy feature vector."""

    def __init__(self, obs_dim: int, n_actions: int, hidden: Sequence[int] = (64, 64)):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.pi = _mlp((obs_dim, *hidden), n_actions, 0.01)
        self.vf = _mlp((obs_dim, *hidden), 1, 1.0)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.pi(x), self.vf(x).squeeze(-1)

    def act(self, obs: HistoryObservation) -> int:
        """Greedy action for an observation."""
        x = torch.as_tensor(policy_features(obs), dtype=self._dtype())
        with torch.no_grad():
            return int(torch.argmax(self.pi(x)))

    def _dtype(self):
        return next(self.parameters()).dtype


PolicyParameters = ActorCritic


def new_policy(env_config: EnvConfig, hidden: Sequence[int] = (64, 64)) -> ActorCritic:
    return ActorCritic(env_config.obs_size + 1, env_config.n_actions, hidden)


def policy_forward(params: ActorCritic, observation) -> tuple[np.ndarray, float]:
    """Action probabilities over all ``2^(n-1)`` masks and the value estimate.

    ``observation`` is a :class:`HistoryObservation` or an already built
    feature vector.
    """
    if isinstance(observation, HistoryObservation):
        observation = policy_features(observation)
    x = torch.as_tensor(np.asarray(observation), dtype=params._dtype())
    if x.shape[-1] != params.obs_dim:
        raise ValueError(f"observation has {x.shape[-1]} features, policy expects {params.obs_dim}")
    with torch.no_grad():
        logits, value = params(x)
        probs = torch.softmax(logits, -1)
    return probs.numpy().astype(float), float(value)


class Batch(NamedTuple):
    obs: torch.Tensor
    actions: torch.Tensor
    old_logp: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor


def ppo_loss(model: ActorCritic, batch: Batch, clip_range: float, ent_coef: float, vf_coef: float,
             normalize_advantage: bool = True) -> torch.Tensor:
    logits, values = model(batch.obs)
    dist = Categorical(logits=logits)
    logp = dist.log_prob(batch.actions)
    adv = batch.advantages
    if normalize_advantage and adv.numel() > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ratio = torch.exp(logp - batch.old_logp)
    surrogate = torch.min(ratio * adv, torch.clamp(ratio, 1 - clip_range, 1 + clip_range) * adv)
    value_loss = torch.mean((batch.returns - values) ** 2)
    return -surrogate.mean() + vf_coef * value_loss - ent_coef * dist.entropy().mean()


def gae(rewards, values, dones, last_values, gamma, lam):
    """Advantages over a ``(steps, envs)`` rollout; ``dones[t]`` marks the end after step ``t``."""
    steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in reversed(range(steps)):
        next_v = last_values if t == steps - 1 else values[t + 1]
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * alive - values[t]
        running = delta + gamma * lam * alive * running
        adv[t] = running
    return adv, adv + values


class EvalResult(NamedTuple):
    mean: float
    stderr: float
    truncated: int
    mean_reward: float = math.nan


class CurvePoint(NamedTuple):
    restart: int
    step: int
    mean_reward: float
    mean_delivery: float
    best_delivery: float


def _greedy_episode(policy, env: RepeaterEnv, seed) -> tuple[int, bool]:
    if isinstance(policy, ActorCritic):
        policy = policy.act
    out = env.reset(seed)
    while not env.done:
        out = env.step(policy(out.observation))
    if env.truncated:
        return env.round, True
    return env.round - 1, False


def evaluate(policy, env_config: EnvConfig, episodes: int, seed: int = 0) -> EvalResult:
    """Mean delivery time (time steps) of a policy; networks act greedily.

    ``policy`` is an :class:`ActorCritic` or any callable mapping an
    observation to an action. Truncated episodes enter the mean at the cap.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = RepeaterEnv(env_config, record=False)
    values, rewards, truncated = [], [], 0
    for ep in range(episodes):
        last, trunc = _greedy_episode(policy, env, np.random.SeedSequence((seed, ep)))
        truncated += trunc
        values.append(delivery_time_from_round(last))
        rewards.append(-last)
    arr = np.asarray(values, dtype=float)
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return EvalResult(float(arr.mean()), stderr, truncated, float(np.mean(rewards)))


def rl_runner(policy) -> Callable[..., EpisodeResult]:
    """Wrap a policy as an episode runner with the fixed-policy signature."""

    def run(params, seed, cap=50_000, record=True):
        cfg = EnvConfig(params.n, params.p_e, params.p_s, int(params.t_cut), params.k, max_rounds=cap)
        env = RepeaterEnv(cfg, record=record)
        last, trunc = _greedy_episode(policy, env, seed)
        delivery = None if trunc else delivery_time_from_round(last)
        return EpisodeResult(delivery, env.trace if record else [], trunc, None if trunc else last + 1)

    return run


@dataclass
class TrainResult:
    params: ActorCritic
    best_delivery: float
    best_reward: float
    curve: list[CurvePoint] = field(default_factory=list)
    restart_scores: list[float] = field(default_factory=list)
    best_restart: int = -1
    best_step: int = -1


def _train_restart(env_config: EnvConfig, tc: TrainConfig, seed: int, restart: int, dtype=torch.float32):
    seeds = np.random.SeedSequence((seed, restart))
    env_seeds = seeds.spawn(tc.n_envs + 1)
    torch.manual_seed(int(seeds.generate_state(1)[0]))
    train_cfg = replace(env_config, max_rounds=tc.train_cap)
    envs = [RepeaterEnv(train_cfg, record=False) for _ in range(tc.n_envs)]
    eval_cfg = replace(env_config, max_rounds=tc.eval_cap)
    model = new_policy(env_config, tc.hidden).to(dtype)
    opt = torch.optim.Adam(model.parameters(), lr=tc.learning_rate, eps=1e-5)
    env_rngs = [np.random.default_rng(s) for s in env_seeds[:-1]]
    eval_seed = int(env_seeds[-1].generate_state(1)[0])

    def fresh(i):
        return envs[i].reset(int(env_rngs[i].integers(2**63))).observation

    obs = [fresh(i) for i in range(tc.n_envs)]
    feats = np.stack([policy_features(o) for o in obs])
    obs_dim = feats.shape[1]

    best = (-math.inf, math.inf, None, -1)  # reward, delivery, state, step
    curve: list[CurvePoint] = []
    steps = 0
    next_ckpt = tc.checkpoint_interval
    stale = 0
    window_done = window_trunc = 0

    while steps < tc.total_steps:
        T, E = tc.n_steps, tc.n_envs
        b_obs = np.zeros((T, E, obs_dim), dtype=np.float32)
        b_act = np.zeros((T, E), dtype=np.int64)
        b_logp = np.zeros((T, E), dtype=np.float32)
        b_val = np.zeros((T, E))
        b_rew = np.zeros((T, E))
        b_done = np.zeros((T, E))
        for t in range(T):
            x = torch.as_tensor(feats, dtype=dtype)
            with torch.no_grad():
                logits, value = model(x)
                dist = Categorical(logits=logits)
                act = dist.sample()
                logp = dist.log_prob(act)
            b_obs[t] = feats
            b_act[t] = act.numpy()
            b_logp[t] = logp.numpy()
            b_val[t] = value.numpy()
            for i, env in enumerate(envs):
                out = env.step(int(act[i]))
                reward = float(out.reward)
                if env.done:
                    window_done += 1
                    if env.truncated:
                        window_trunc += 1
                        # time limit, not a real terminal: bootstrap
                        with torch.no_grad():
                            tail = torch.as_tensor(policy_features(out.observation), dtype=dtype)
                            reward += tc.gamma * float(model.vf(tail))
                    b_done[t, i] = 1.0
                    obs[i] = fresh(i)
                else:
                    obs[i] = out.observation
                b_rew[t, i] = reward
            feats = np.stack([policy_features(o) for o in obs])
        steps += T * E
        with torch.no_grad():
            last_v = model(torch.as_tensor(feats, dtype=dtype))[1].numpy()
        adv, ret = gae(b_rew, b_val, b_done, last_v, tc.gamma, tc.gae_lambda)

        flat = lambda a: torch.as_tensor(a.reshape(T * E, *a.shape[2:]))
        data = Batch(flat(b_obs).to(dtype), flat(b_act), flat(b_logp).to(dtype),
                     flat(adv).to(dtype), flat(ret).to(dtype))
        size = T * E
        for _ in range(tc.n_epochs):
            perm = torch.randperm(size)
            for start in range(0, size, tc.batch_size):
                idx = perm[start:start + tc.batch_size]
                mb = Batch(*(v[idx] for v in data))
                loss = ppo_loss(model, mb, tc.clip_range, tc.ent_coef, tc.vf_coef)
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.parameters(), tc.max_grad_norm)
                opt.step()

        if steps >= next_ckpt or steps >= tc.total_steps:
            next_ckpt += tc.checkpoint_interval
            ev = evaluate(model, eval_cfg, tc.eval_episodes, eval_seed)
            reward = ev.mean_reward
            if ev.truncated == 0 and (ev.mean < best[1] or (ev.mean == best[1] and reward > best[0])):
                best = (reward, ev.mean, copy.deepcopy(model.state_dict()), steps)
            curve.append(CurvePoint(restart, steps, reward, ev.mean, best[1]))
            log.info("restart %d step %d: greedy delivery %.3f (best %.3f)", restart, steps, ev.mean, best[1])
            if window_done == 0 or window_trunc == window_done:
                stale += 1
            else:
                stale = 0
            window_done = window_trunc = 0
            if stale >= tc.divergence_patience:
                log.warning("restart %d aborted: episodes keep hitting the cap", restart)
                break
            if tc.target_delivery is not None and best[1] <= tc.target_delivery:
                break

    if best[2] is None:
        best = (best[0], best[1], copy.deepcopy(model.state_dict()), steps)
    model.load_state_dict(best[2])
    return model, best, curve


def train(env_config: EnvConfig, tc: TrainConfig, seed: int = 0) -> TrainResult:
    """Run ``tc.restarts`` independent trainings and keep the best checkpoint."""
    result = None
    all_curve: list[CurvePoint] = []
    scores: list[float] = []
    with torch.random.fork_rng(devices=[]):
        for restart in range(tc.restarts):
            model, best, curve = _train_restart(env_config, tc, seed, restart)
            earlier = min(scores, default=math.inf)
            all_curve += [p._replace(best_delivery=min(p.best_delivery, earlier)) for p in curve]
            scores.append(best[1])
            if result is None or best[1] < result.best_delivery:
                result = TrainResult(model, best[1], best[0], best_restart=restart, best_step=best[3])
    result.curve = all_curve
    result.restart_scores = scores
    return result


def gradient_check(model: ActorCritic, batch: Batch, tc: TrainConfig | None = None,
                   n_coords: int = 200, eps: float = 1e-6, seed: int = 0) -> float:
    """Relative error between autograd and central-difference gradients of the loss.

    Works on a float64 copy of ``model`` and a random subset of coordinates.
    """
    tc = tc or TrainConfig()
    m = copy.deepcopy(model).double()
    b = Batch(batch.obs.double(), batch.actions, batch.old_logp.double(),
              batch.advantages.double(), batch.returns.double())

    def loss_fn():
        return ppo_loss(m, b, tc.clip_range, tc.ent_coef, tc.vf_coef)

    m.zero_grad()
    loss_fn().backward()
    params = list(m.parameters())
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).clone()
    flat = [(pi, j) for pi, p in enumerate(params) for j in range(p.numel())]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(flat), size=min(n_coords, len(flat)), replace=False)
    offsets = np.cumsum([0] + [p.numel() for p in params])
    a_vals, fd_vals = [], []
    with torch.no_grad():
        for c in chosen:
            pi, j = flat[c]
            view = params[pi].view(-1)
            orig = view[j].item()
            view[j] = orig + eps
            up = loss_fn().item()
            view[j] = orig - eps
            down = loss_fn().item()
            view[j] = orig
            fd_vals.append((up - down) / (2 * eps))
            a_vals.append(analytic[offsets[pi] + j].item())
    a = np.asarray(a_vals)
    fd = np.asarray(fd_vals)
    return float(np.linalg.norm(a - fd) / max(np.linalg.norm(a), np.linalg.norm(fd), 1e-300))


def collect_batch(model: ActorCritic, env_config: EnvConfig, steps: int, seed: int = 0,
                  tc: TrainConfig | None = None) -> Batch:
    """Sample ``steps`` transitions with the current policy and package them as a batch."""
    tc = tc or TrainConfig()
    gen = torch.Generator().manual_seed(seed)
    env = RepeaterEnv(replace(env_config, max_rounds=tc.train_cap), record=False)
    obs = env.reset(seed).observation
    feats, acts, logps, vals, rews, dones = [], [], [], [], [], []
    for _ in range(steps):
        x = torch.as_tensor(policy_features(obs))
        with torch.no_grad():
            logits, v = model(x.to(model._dtype()))
            a = torch.multinomial(torch.softmax(logits, -1), 1, generator=gen).item()
            lp = torch.log_softmax(logits, -1)[a]
        out = env.step(a)
        feats.append(x.numpy())
        acts.append(a)
        logps.append(float(lp))
        vals.append(float(v))
        rews.append(float(out.reward))
        dones.append(float(env.done))
        obs = env.reset().observation if env.done else out.observation
    with torch.no_grad():
        last = float(model(torch.as_tensor(policy_features(obs)).to(model._dtype()))[1])
    r = np.asarray(rews)[:, None]
    adv, ret = gae(r, np.asarray(vals)[:, None], np.asarray(dones)[:, None], np.array([last]),
                   tc.gamma, tc.gae_lambda)
    return Batch(torch.as_tensor(np.stack(feats)), torch.as_tensor(acts),
                 torch.as_tensor(logps), torch.as_tensor(adv[:, 0]), torch.as_tensor(ret[:, 0]))


# --- persistence --------------------------------------------------------------

def save_checkpoint(path, model: ActorCritic, env_config: EnvConfig, train_config: TrainConfig,
                    score: float, extra: dict | None = None) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "env_config": asdict(env_config),
            "train_config": asdict(train_config),
            "obs_dim": model.obs_dim,
            "n_actions": model.n_actions,
            "hidden": list(model.hidden),
            "state_dict": model.state_dict(),
            "torch_rng_state": torch.get_rng_state(),
            "score": score,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> tuple[ActorCritic, dict]:
    data = torch.load(path, weights_only=False)
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    model = ActorCritic(data["obs_dim"], data["n_actions"], data["hidden"])
    model.load_state_dict(data["state_dict"])
    return model, data


def write_curve_csv(curve: Sequence[CurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["restart", "checkpoint_step", "mean_reward", "mean_delivery", "best_delivery"])
        for p in curve:
            w.writerow([p.restart, p.step, f"{p.mean_reward:.6g}", f"{p.mean_delivery:.6g}", f"{p.best_delivery:.6g}"])
