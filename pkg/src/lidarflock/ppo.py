"""Proximal policy optimization on the numpy actor-critic.

Gradients of the clipped surrogate, value, and entropy terms are
derived by hand and accumulated through the network's backward pass;
`gradient_check` verifies them against central finite differences.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .net import ActorCritic, NetConfig

log = logging.getLogger(__name__)


@dataclass
class PpoParams:
    clip_epsilon: float = 0.1
    value_coef: float = 1.0
    entropy_coef: float = 0.001
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rollout_length: int = 128
    n_epochs: int = 4
    minibatch_size: int = 4096

    def validate(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        for name in ("rollout_length", "n_epochs", "minibatch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        return self


def gae(rewards, values, next_values, dones, truncs, gamma, lam):
    """Generalized advantage estimation over a (T, ...) rollout.

    delta_t = r_t + gamma * V(o_{t+1}) * (1 - done_t) - V(o_t)
    A_t = delta_t + gamma * lam * A_{t+1}, with the recursion cut at
    episode boundaries (done or truncated). `next_values` must hold the
    value of the successor observation; at a truncated step that is the
    value of the terminal observation, which keeps the bootstrap alive
    while `done` zeroes it at true terminations.

    Returns (advantages, value_targets), targets = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    truncs = np.asarray(truncs, dtype=np.float64)

    delta = rewards + gamma * next_values * (1.0 - dones) - values
    boundary = np.clip(dones + truncs, 0.0, 1.0)
    adv = np.zeros_like(delta)
    carry = np.zeros_like(delta[0] if delta.ndim > 1 else delta[:1][0])
    for t in range(len(delta) - 1, -1, -1):
        carry = delta[t] + gamma * lam * (1.0 - boundary[t]) * carry
        adv[t] = carry
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class Adam:
    """Standard Adam with bias correction, one slot pair per parameter."""

    def __init__(self, model: ActorCritic, params: PpoParams):
        self.hp = params
        self.t = 0
        self.m = [np.zeros_like(p.v, dtype=np.float64) for p in model.params()]
        self.v = [np.zeros_like(p.v, dtype=np.float64) for p in model.params()]

    def step(self, model: ActorCritic, lr=None):
        hp = self.hp
        lr = hp.learning_rate if lr is None else lr
        self.t += 1
        b1c = 1.0 - hp.adam_beta1 ** self.t
        b2c = 1.0 - hp.adam_beta2 ** self.t
        for i, p in enumerate(model.params()):
            g = p.g.astype(np.float64)
            self.m[i] = hp.adam_beta1 * self.m[i] + (1.0 - hp.adam_beta1) * g
            self.v[i] = hp.adam_beta2 * self.v[i] + (1.0 - hp.adam_beta2) * g * g
            update = lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + hp.adam_eps)
            p.v = (p.v.astype(np.float64) - update).astype(p.v.dtype)


@dataclass
class MinibatchStats:
    loss: float
    clip_term: float
    value_term: float
    entropy: float
    clip_fraction: float


def ppo_loss(model: ActorCritic, batch, hp: PpoParams, compute_grad=True):
    """Evaluate loss = -L_clip + c1 * L_vf - c2 * H on one minibatch and,
    when asked, accumulate its parameter gradients on the model.

    `batch` needs keys: ego, neigh, grid, actions, old_logp, advantages,
    value_targets. Advantages are used as given (normalize beforehand).
    """
    mean, log_std, value = model.forward(batch["ego"], batch["neigh"],
                                         batch["grid"], cache=compute_grad)
    mean64 = mean.astype(np.float64)
    log_std64 = log_std.astype(np.float64)
    value64 = value.astype(np.float64)
    actions = np.asarray(batch["actions"], dtype=np.float64)
    old_logp = np.asarray(batch["old_logp"], dtype=np.float64)
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    vtarg = np.asarray(batch["value_targets"], dtype=np.float64)

    n = mean64.shape[0]
    std = np.exp(log_std64)
    z = (actions - mean64) / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std64) \
        - 0.5 * mean64.shape[1] * np.log(2.0 * np.pi)

    ratio = np.exp(logp - old_logp)
    lo, hi = 1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    surrogate = np.minimum(unclipped, clipped)
    l_clip = surrogate.mean()

    verr = value64 - vtarg
    l_vf = np.mean(verr * verr)

    entropy = float(np.sum(log_std64)
                    + 0.5 * mean64.shape[1] * np.log(2.0 * np.pi * np.e))

    loss = -l_clip + hp.value_coef * l_vf - hp.entropy_coef * entropy
    stats = MinibatchStats(loss=float(loss), clip_term=float(l_clip),
                           value_term=float(l_vf), entropy=entropy,
                           clip_fraction=float(np.mean(np.abs(ratio - 1.0)
                                                       > hp.clip_epsilon)))
    if not compute_grad:
        return stats

    # d loss / d logp_i: the min() selects the unclipped branch when it is
    # <= the clipped one; the clipped branch has zero density gradient
    # because it is only selected strictly when the ratio sits at a bound.
    use = (unclipped <= clipped).astype(np.float64)
    dlogp = -(adv * ratio * use) / n

    dmean = dlogp[:, None] * (actions - mean64) / (std * std)
    dlog_std_policy = dlogp @ (z * z - 1.0)
    dvalue = hp.value_coef * 2.0 * verr / n
    dlog_std = dlog_std_policy - hp.entropy_coef * np.ones_like(log_std64)

    model.backward(dmean, dvalue, dlog_std)
    return stats


def gradient_check(model: ActorCritic, batches, hp: PpoParams,
                   step=1e-5, return_details=False):
    """Compare analytic gradients against central finite differences.

    Returns the worst relative error over all parameters and batches
    (and per-batch errors when `return_details`). Meant for the tiny
    float64 network profile; cost grows linearly with parameter count.
    """
    worst = 0.0
    per_batch = []
    theta0 = model.get_flat().astype(np.float64)
    for batch in batches:
        model.set_flat(theta0)
        model.zero_grad()
        ppo_loss(model, batch, hp, compute_grad=True)
        analytic = model.get_flat_grad().astype(np.float64)

        fd = np.zeros_like(theta0)
        for i in range(len(theta0)):
            theta = theta0.copy()
            theta[i] = theta0[i] + step
            model.set_flat(theta)
            lp = ppo_loss(model, batch, hp, compute_grad=False).loss
            theta[i] = theta0[i] - step
            model.set_flat(theta)
            lm = ppo_loss(model, batch, hp, compute_grad=False).loss
            fd[i] = (lp - lm) / (2.0 * step)

        denom = np.maximum(np.abs(analytic) + np.abs(fd), 1e-6)
        err = float(np.max(np.abs(analytic - fd) / denom))
        per_batch.append(err)
        worst = max(worst, err)
    model.set_flat(theta0)
    model.zero_grad()
    if return_details:
        return worst, per_batch
    return worst


def make_gradcheck_batch(model: ActorCritic, rng, batch_size=8,
                         logp_jitter=0.2):
    """Synthesize a minibatch for gradient checking. Old log-probs are
    jittered away from the current policy's so the probability ratios sit
    clear of the clip corners where min() is non-differentiable."""
    cfg = model.config
    ego = rng.standard_normal((batch_size, cfg.ego_dim))
    neigh = rng.standard_normal((batch_size, cfg.neighbor_dim))
    grid = rng.random((batch_size, *cfg.grid_shape))
    mean, log_std, _ = model.forward(ego, neigh, grid)
    actions = mean.astype(np.float64) + np.exp(log_std) \
        * rng.standard_normal((batch_size, cfg.action_dim))
    logp, _ = model.log_prob_entropy(mean.astype(np.float64),
                                     log_std.astype(np.float64), actions)
    old_logp = logp + rng.uniform(logp_jitter, 2.0 * logp_jitter, batch_size) \
        * rng.choice([-1.0, 1.0], batch_size)
    adv = rng.standard_normal(batch_size)
    vtarg = rng.standard_normal(batch_size)
    return {"ego": ego, "neigh": neigh, "grid": grid, "actions": actions,
            "old_logp": old_logp, "advantages": adv, "value_targets": vtarg}


# ----- rollout collection and the update loop -----

class RolloutBuffer:
    """Fixed-length on-policy storage, flat over (time, actor)."""

    def __init__(self, length, n_actors, cfg: NetConfig):
        t, b = length, n_actors
        self.ego = np.zeros((t, b, cfg.ego_dim), dtype=np.float32)
        self.neigh = np.zeros((t, b, cfg.neighbor_dim), dtype=np.float32)
        self.grid = np.zeros((t, b, *cfg.grid_shape), dtype=np.float32)
        self.actions = np.zeros((t, b, cfg.action_dim), dtype=np.float64)
        self.old_logp = np.zeros((t, b), dtype=np.float64)
        self.rewards = np.zeros((t, b), dtype=np.float64)
        self.values = np.zeros((t, b), dtype=np.float64)
        self.next_values = np.zeros((t, b), dtype=np.float64)
        self.dones = np.zeros((t, b), dtype=np.float64)
        self.truncs = np.zeros((t, b), dtype=np.float64)

    def flat_batch(self, advantages, value_targets):
        def merge(a):
            return a.reshape(-1, *a.shape[2:])
        return {"ego": merge(self.ego), "neigh": merge(self.neigh),
                "grid": merge(self.grid), "actions": merge(self.actions),
                "old_logp": self.old_logp.reshape(-1),
                "advantages": advantages.reshape(-1),
                "value_targets": value_targets.reshape(-1)}


def _stack_obs(obs_list):
    ego = np.stack([o.ego for o in obs_list])
    neigh = np.stack([o.neighbors for o in obs_list])
    grid = np.stack([o.grid for o in obs_list])
    return ego, neigh, grid


@dataclass
class TrainResult:
    model: ActorCritic
    episode_returns: list
    update_rows: list
    env_steps: int


LOG_FIELDS = ("update", "env_steps", "episodes_done", "mean_return",
              "loss", "clip_term", "value_term", "entropy", "clip_fraction")


def train(envs, model: ActorCritic, hp: PpoParams, total_env_steps,
          seed=0, log_path=None, checkpoint_fn=None, checkpoint_every=0,
          progress=None):
    """Run PPO over a list of vectorized swarm environments.

    Each env contributes `n_followers` actors per step; one env step is
    counted once toward `total_env_steps` regardless of follower count.
    Returns a TrainResult with per-episode returns (mean over followers)
    and one log row per update.
    """
    hp.validate()
    action_rng = np.random.default_rng(seed)
    shuffle_rng = np.random.default_rng(seed + 1)

    n_actors = sum(e.n_followers for e in envs)
    buf = RolloutBuffer(hp.rollout_length, n_actors, model.config)
    optimizer = Adam(model, hp)

    slots = []
    start = 0
    for e in envs:
        slots.append(slice(start, start + e.n_followers))
        start += e.n_followers

    current = []
    for e in envs:
        current.extend(e.reset())

    episode_returns = []
    update_rows = []
    env_steps = 0
    update = 0
    writer = None
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        writer.writeheader()

    try:
        while env_steps < total_env_steps:
            update += 1
            returns_this_update = []
            for t in range(hp.rollout_length):
                ego, neigh, grid = _stack_obs(current)
                actions, logp, values = model.act(ego, neigh, grid, action_rng)
                buf.ego[t] = ego
                buf.neigh[t] = neigh
                buf.grid[t] = grid
                buf.actions[t] = actions
                buf.old_logp[t] = logp
                buf.values[t] = values

                next_obs = []
                for env, sl in zip(envs, slots):
                    obs_list, rewards, done, truncated, info = env.step(
                        actions[sl])
                    idx = np.arange(sl.start, sl.stop)
                    buf.rewards[t, idx] = rewards
                    buf.dones[t, idx] = float(done)
                    buf.truncs[t, idx] = float(truncated and not done)
                    if done or truncated:
                        episode_returns.append(info["episode_return"])
                        returns_this_update.append(info["episode_return"])
                        if truncated and not done:
                            tego, tneigh, tgrid = _stack_obs(obs_list)
                            buf.next_values[t, idx] = model.value(
                                tego, tneigh, tgrid)
                        else:
                            buf.next_values[t, idx] = 0.0
                        obs_list = env.reset()
                    next_obs.extend(obs_list)
                current = next_obs
                env_steps += len(envs)

                live = (buf.dones[t] + buf.truncs[t]) == 0.0
                if np.any(live):
                    ego, neigh, grid = _stack_obs(current)
                    nv = model.value(ego, neigh, grid)
                    buf.next_values[t, live] = nv[live]

            adv, vtarg = gae(buf.rewards, buf.values, buf.next_values,
                             buf.dones, buf.truncs, hp.gamma, hp.gae_lambda)
            adv = normalize_advantages(adv)
            batch = buf.flat_batch(adv, vtarg)

            n = len(batch["old_logp"])
            stats_acc = []
            for _ in range(hp.n_epochs):
                order = shuffle_rng.permutation(n)
                for s in range(0, n, hp.minibatch_size):
                    idx = order[s:s + hp.minibatch_size]
                    mb = {k: v[idx] for k, v in batch.items()}
                    model.zero_grad()
                    stats = ppo_loss(model, mb, hp, compute_grad=True)
                    optimizer.step(model)
                    stats_acc.append(stats)

            row = {
                "update": update,
                "env_steps": env_steps,
                "episodes_done": len(episode_returns),
                "mean_return": float(np.mean(returns_this_update))
                if returns_this_update else float("nan"),
                "loss": float(np.mean([s.loss for s in stats_acc])),
                "clip_term": float(np.mean([s.clip_term for s in stats_acc])),
                "value_term": float(np.mean([s.value_term for s in stats_acc])),
                "entropy": float(np.mean([s.entropy for s in stats_acc])),
                "clip_fraction": float(np.mean([s.clip_fraction
                                                for s in stats_acc])),
            }
            update_rows.append(row)
            if writer is not None:
                writer.writerow(row)
                log_file.flush()
            if progress is not None:
                progress(row)
            if checkpoint_fn is not None and checkpoint_every > 0 \
                    and update % checkpoint_every == 0:
                checkpoint_fn(model, update)
    finally:
        if log_file is not None:
            log_file.close()

    if checkpoint_fn is not None:
        checkpoint_fn(model, update)
    return TrainResult(model=model, episode_returns=episode_returns,
                       update_rows=update_rows, env_steps=env_steps)
