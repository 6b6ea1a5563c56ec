"""PPO with clipped surrogate, GAE and Adam, operating on a flat parameter vector."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .policy import GaussianPolicy, RunningNorm, gaussian_log_prob

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 5
    minibatch_size: int = 800
    learning_rate: float = 3e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    value_loss_coeff: float = 0.5
    entropy_coeff: float = 0.0
    max_grad_norm: float = 0.5
    horizon: int = 400
    env_count: int = 40
    hidden: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be positive")
        if min(self.epochs_per_update, self.minibatch_size, self.horizon, self.env_count) <= 0:
            raise ValueError("epochs, minibatch size, horizon and env count must be positive")


class Adam:
    def __init__(self, size: int, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place parameter update."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def gae(rewards, values, next_values, dones, gamma: float, lam: float):
    """Generalized advantage estimates over a (T, ...) time-major batch.

    ``next_values[t]`` is the value of the state reached after step ``t``
    (zero for true terminals, the bootstrap value for truncations);
    ``dones[t]`` cuts the recursion at episode boundaries.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    cont = 1.0 - np.asarray(dones, float)
    delta = rewards + gamma * np.asarray(next_values, float) - values
    adv = np.zeros_like(delta)
    running = np.zeros(delta.shape[1:])
    for t in range(delta.shape[0] - 1, -1, -1):
        running = delta[t] + gamma * lam * cont[t] * running
        adv[t] = running
    return adv, adv + values


def gae_from_values(rewards, values, last_value, dones, gamma: float, lam: float):
    """Textbook form: delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t with V_T = ``last_value``."""
    values = np.asarray(values, float)
    following = np.concatenate([values[1:], np.asarray(last_value, float)[None]], axis=0)
    return gae(rewards, values, following * (1.0 - np.asarray(dones, float)), dones, gamma, lam)


def normalize_advantages(adv):
    adv = np.asarray(adv, float)
    return (adv - adv.mean()) / max(adv.std(), 1e-8)


@dataclass
class RolloutBatch:
    """Time-major (H, E, ...) arrays; ``obs`` is already normalized."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    dones: np.ndarray
    aborts: np.ndarray
    raw_obs: np.ndarray
    records: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.rewards.size


def collect_rollouts(env, policy: GaussianPolicy, norm: RunningNorm, horizon: int, rng: np.random.Generator,
                     obs: np.ndarray | None = None):
    """Step the vectorized ``env`` for ``horizon`` ticks with one frozen policy.

    Returns the batch and the live observation to continue from.
    """
    e = env.num_envs
    if obs is None:
        obs = env.reset()
    shape = (horizon, e)
    out = RolloutBatch(
        obs=np.zeros(shape + (policy.obs_dim,)), actions=np.zeros(shape + (policy.act_dim,)),
        log_probs=np.zeros(shape), rewards=np.zeros(shape), values=np.zeros(shape), next_values=np.zeros(shape),
        dones=np.zeros(shape, dtype=bool), aborts=np.zeros(shape, dtype=bool), raw_obs=np.zeros(shape + (policy.obs_dim,)),
    )
    std = np.exp(policy.log_std)
    for t in range(horizon):
        x = norm(obs)
        mu = policy.mean(x)
        a = mu + std * rng.standard_normal(mu.shape)
        out.obs[t], out.raw_obs[t], out.actions[t] = x, obs, a
        out.log_probs[t] = gaussian_log_prob(a, mu, policy.log_std)
        out.values[t] = policy.value(x)
        res = env.step(a)
        out.rewards[t] = res.reward
        out.dones[t] = res.done
        out.aborts[t] = res.abort
        out.records.extend(res.records)
        # successor-state values; filled from the next tick's values below except at boundaries
        if res.done.any():
            truncated = res.timeout
            out.next_values[t] = np.where(truncated, policy.value(norm(res.final_obs)), 0.0)
        obs = res.obs
    last = policy.value(norm(obs))
    following = np.concatenate([out.values[1:], last[None]], axis=0)
    out.next_values = np.where(out.dones, out.next_values, following)
    return out, obs


def ppo_loss_and_grad(policy: GaussianPolicy, grads: GaussianPolicy, obs, actions, old_log_probs, adv, returns,
                      cfg: PpoConfig):
    """Total loss and its gradient (written into ``grads.theta``) for one minibatch."""
    grads.theta[:] = 0.0
    b = obs.shape[0]
    eps = cfg.clip_epsilon
    mu, acts_pi = policy.actor.forward(obs)
    log_std = policy.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mu
    logp = gaussian_log_prob(actions, mu, log_std)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1 - eps, 1 + eps)
    surrogate = -np.mean(np.minimum(ratio * adv, clipped * adv))
    # gradient flows only through samples whose unclipped branch is the minimum
    active = ~(((adv > 0) & (ratio > 1 + eps)) | ((adv < 0) & (ratio < 1 - eps)))
    d_logp = -(adv * ratio * active) / b
    d_mu = d_logp[:, None] * diff * inv_var
    grads.log_std[:] = d_logp @ (diff * diff * inv_var - 1.0)
    policy.actor.backward(acts_pi, d_mu, grads.actor)

    v, acts_v = policy.critic.forward(obs)
    v = v[:, 0]
    value_loss = np.mean((v - returns) ** 2)
    policy.critic.backward(acts_v, (2.0 * cfg.value_loss_coeff * (v - returns) / b)[:, None], grads.critic)

    entropy = policy.entropy()
    grads.log_std[:] -= cfg.entropy_coeff
    loss = surrogate + cfg.value_loss_coeff * value_loss - cfg.entropy_coeff * entropy
    log_ratio = np.log(np.maximum(ratio, 1e-300))
    stats = {
        "policy_loss": surrogate,
        "value_loss": value_loss,
        "kl": float(np.mean((ratio - 1.0) - log_ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return loss, stats


def ppo_update(policy: GaussianPolicy, batch: RolloutBatch, cfg: PpoConfig, adam: Adam, rng: np.random.Generator) -> dict:
    """Several epochs of minibatch Adam steps on the clipped PPO objective."""
    adv, returns = gae(batch.rewards, batch.values, batch.next_values, batch.dones, cfg.gamma, cfg.gae_lambda)
    obs = batch.obs.reshape(-1, policy.obs_dim)
    actions = batch.actions.reshape(-1, policy.act_dim)
    old_logp = batch.log_probs.reshape(-1)
    adv = normalize_advantages(adv.reshape(-1))
    returns = returns.reshape(-1)
    grads = policy.zeros_like()
    n = obs.shape[0]
    mb = min(cfg.minibatch_size, n)
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "clip_fraction": 0.0}
    steps = skipped = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = order[start : start + mb]
            loss, stats = ppo_loss_and_grad(policy, grads, obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx], cfg)
            if not (np.isfinite(loss) and np.all(np.isfinite(grads.theta))):
                log.warning("non-finite PPO loss, minibatch skipped")
                skipped += 1
                continue
            norm = np.linalg.norm(grads.theta)
            if norm > cfg.max_grad_norm:
                grads.theta *= cfg.max_grad_norm / norm
            adam.step(policy.theta, grads.theta)
            policy.clamp_log_std()
            for k in totals:
                totals[k] += stats[k]
            steps += 1
    out = {k: v / max(steps, 1) for k, v in totals.items()}
    out["skipped"] = skipped
    return out
